#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "negdist/model.hpp"
#include "negdist/types.hpp"

namespace negdist::checkpoint {

enum class DType { F32, F64 };

struct NamedTensor {
  std::string name;
  DType dtype = DType::F32;
  Matrix value;
};

/// Self-describing tensor container.
///
///     negdist-tensors 1
///     <key> <value>            (zero or more header lines)
///     tensor <name> <f32|f64> <rows> <cols>
///     ...
///     end
///     <little-endian payload of every tensor, in listed order, row-major>
struct TensorFile {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<NamedTensor> tensors;

  std::optional<std::string> find(std::string_view key) const;
  const std::string& at(std::string_view key) const;
  const NamedTensor* tensor(std::string_view name) const;
};

inline constexpr int kFormatVersion = 1;

void write_tensor_file(std::ostream& out, const TensorFile& file);
TensorFile read_tensor_file(std::istream& in);
void save_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile load_tensor_file(const std::filesystem::path& path);

std::vector<std::pair<std::string, std::string>> config_header(const model::ModelConfig& config);
model::ModelConfig config_from_header(const TensorFile& file);

/// Appends every parameter tensor under `prefix` + its canonical name.
void append_parameters(TensorFile& file, const model::Parameters& params, DType dtype,
                       const std::string& prefix = "");
/// Fills `params` from tensors named `prefix` + canonical name.
void extract_parameters(const TensorFile& file, model::Parameters& params, const std::string& prefix = "");

/// Model checkpoint: config header plus float32 tensors. Lossless for
/// parameters that are float32-representable, which init and the optimizer
/// guarantee.
void save_parameters(const std::filesystem::path& path, const model::Parameters& params);
model::Parameters load_parameters(const std::filesystem::path& path);

}  // namespace negdist::checkpoint
