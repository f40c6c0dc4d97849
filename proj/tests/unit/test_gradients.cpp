#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "negdist/model.hpp"

namespace negdist {
namespace {

class GradientTest : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientTest, AnalyticMatchesCentralDifferences) {
  const auto cases = testing::gradient_cases(5);
  const auto& c = cases[GetParam()];
  const auto params = model::init_parameters(testing::tiny_config(), 77);
  const auto report = testing::check_gradient(c, params, 120, 1234);
  EXPECT_EQ(report.failures, 0u) << c.name << ": worst " << report.worst << " rel " << report.max_rel_error;
  EXPECT_EQ(report.checked, 120u);
}

INSTANTIATE_TEST_SUITE_P(AllLosses, GradientTest, ::testing::Range<std::size_t>(0, 9),
                         [](const auto& info) { return testing::gradient_cases(5)[info.param].name; });

}  // namespace
}  // namespace negdist
