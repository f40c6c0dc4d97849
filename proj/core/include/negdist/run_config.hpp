#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "negdist/losses.hpp"
#include "negdist/model.hpp"
#include "negdist/training.hpp"

namespace negdist {

/// Everything a training run reads from its flat `key = value` config file.
/// Lines starting with '#' are comments; unknown keys are Config errors.
struct RunConfig {
  // Data and artifacts.
  std::filesystem::path train_data;     // D for distill / MLE
  std::filesystem::path valid_data;
  std::filesystem::path negative_data;  // D_N
  std::filesystem::path vocab;
  std::filesystem::path teacher;        // teacher checkpoint for distill
  std::filesystem::path output_dir = "run";
  /// Ratio used to carve the teacher's validation set out of valid_data.
  double filter_ratio = 0.5;
  /// Train the student on D \ D_N instead of D.
  bool exclude_negative = false;

  model::ModelConfig model;
  train::OptimConfig optim;
  loss::ScheduleConfig schedule;
  loss::DistillConfig distill;

  RunConfig();

  /// Resolved keys and values, in documentation order.
  std::vector<std::pair<std::string, std::string>> entries() const;

  /// Every accepted key.
  static const std::vector<std::string>& keys();
};

/// Parses, applies derived defaults (d_k = d_model / num_heads, gamma =
/// 2 * warmup_steps, beta = 6 / gamma) and validates. Relative paths are
/// resolved against `base_dir`.
RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir = {},
                           std::string_view source_name = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

std::string to_string(loss::NegativeTarget target);
loss::NegativeTarget parse_negative_target(std::string_view text);

}  // namespace negdist
