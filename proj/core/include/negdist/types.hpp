#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace negdist {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

/// Row-major so that one row is one sequence position.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace negdist
