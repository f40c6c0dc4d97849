#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "negdist/corpus.hpp"
#include "negdist/losses.hpp"
#include "negdist/model.hpp"

namespace negdist::train {

struct OptimConfig {
  std::size_t warmup_steps = 200;
  /// Width used by the learning-rate formula; must equal the model's d_model.
  std::size_t d_model = 64;
  std::size_t batch_size = 32;
  std::size_t max_steps = 5000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-9;
  std::uint64_t seed = 1;
  std::size_t validation_interval = 100;
  /// Stop after this many validations without improvement; 0 disables.
  std::size_t patience = 10;

  void validate() const;
};

/// lr = 2 * min(1/sqrt(s), s/sqrt(s_wp^3)) / sqrt(d_model). Domain error for s < 1.
double lr_schedule(std::int64_t step, const OptimConfig& config);

/// Adam with bias correction. Updated parameters are rounded to float32.
class Adam {
 public:
  Adam(const model::Parameters& like, const OptimConfig& config);

  void step(model::Parameters& params, const model::Parameters& grads, double lr);

  std::int64_t steps_taken() const noexcept { return t_; }
  const model::Parameters& first_moment() const noexcept { return m_; }
  const model::Parameters& second_moment() const noexcept { return v_; }

  void restore(std::int64_t t, model::Parameters m, model::Parameters v);

 private:
  double beta1_, beta2_, epsilon_;
  std::int64_t t_ = 0;
  model::Parameters m_, v_;
};

/// Stateless 64-bit mixing used to derive per-epoch and per-step seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Batch order for one epoch: shuffle with (seed, epoch), bucket by length,
/// cut into batches, shuffle batch order.
std::vector<std::vector<std::size_t>> epoch_batches(const corpus::Dataset& data, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

std::vector<model::Example> as_examples(const corpus::Dataset& data, std::span<const std::size_t> indices);

/// Mean per-example token NLL in eval mode, no label smoothing.
double validation_loss(const model::Parameters& params, const corpus::Dataset& data, std::size_t batch_size);

struct ValidationRecord {
  std::int64_t step = 0;
  double train_loss = 0.0;  // mean objective over steps since the previous record
  double valid_loss = 0.0;
  double alpha = 0.0;
  double lr = 0.0;
  loss::LossBreakdown breakdown;  // means over the same steps
};

void write_log_header(std::ostream& out);
void write_log_line(std::ostream& out, const ValidationRecord& record);

struct StepOutcome {
  loss::LossBreakdown breakdown;
};

/// Computes the objective on one batch and accumulates parameter gradients
/// into `grads` (which arrive zeroed).
using Objective = std::function<StepOutcome(const model::Parameters& params, std::span<const model::Example> batch,
                                            std::int64_t step, std::uint64_t dropout_seed,
                                            model::Parameters& grads)>;

struct TrainState {
  explicit TrainState(const model::ModelConfig& config) : params(config), best_params(config) {}

  std::int64_t step = 0;
  model::Parameters params;
  double best_valid_loss = std::numeric_limits<double>::infinity();
  std::int64_t best_step = 0;
  model::Parameters best_params;
  std::size_t since_improvement = 0;
  // Batch position: epochs are regenerated from (seed, epoch).
  std::uint64_t epoch = 0;
  std::size_t batch_cursor = 0;
  // Running sums for the next validation record.
  std::size_t pending_steps = 0;
  loss::LossBreakdown pending;
  bool stopped = false;
};

struct TrainResult {
  explicit TrainResult(const model::ModelConfig& config) : best(config) {}

  model::Parameters best;
  double best_valid_loss = 0.0;
  std::int64_t best_step = 0;
  std::int64_t steps_run = 0;
  bool early_stopped = false;
  std::vector<ValidationRecord> log;
  std::vector<double> step_alpha;  // alpha used at steps 1..steps_run
};

class Trainer {
 public:
  /// `valid` may be empty, in which case the training set doubles as the
  /// validation set.
  Trainer(const model::ModelConfig& model_config, const OptimConfig& optim, const corpus::Dataset& train,
          const corpus::Dataset& valid, Objective objective);

  /// One optimizer update, plus a validation when the interval is reached.
  /// Returns false once max_steps is reached or early stopping fired.
  bool step();
  bool finished() const noexcept;
  TrainResult run();

  const TrainState& state() const noexcept { return state_; }
  const Adam& optimizer() const noexcept { return adam_; }
  const std::vector<ValidationRecord>& log() const noexcept { return log_; }
  const std::vector<double>& step_alpha() const noexcept { return step_alpha_; }

  /// Optional sink that receives each validation record as it is produced.
  void set_log_sink(std::function<void(const ValidationRecord&)> sink) { sink_ = std::move(sink); }

  /// Full state including optimizer moments (float64) and batch position.
  void save_state(const std::filesystem::path& path) const;
  void load_state(const std::filesystem::path& path);

 private:
  void validate_now();
  TrainResult result() const;

  model::ModelConfig model_config_;
  OptimConfig optim_;
  const corpus::Dataset* train_;
  const corpus::Dataset* valid_;
  Objective objective_;
  Adam adam_;
  TrainState state_;
  std::vector<std::vector<std::size_t>> epoch_;
  std::vector<ValidationRecord> log_;
  std::vector<double> step_alpha_;
  std::function<void(const ValidationRecord&)> sink_;
};

/// Plain MLE objective with label smoothing.
Objective mle_objective(double label_smoothing);

struct DistillOptions {
  loss::ScheduleConfig schedule;
  loss::DistillConfig distill;
  /// Responses drawn for NegativeTarget::Random.
  const corpus::Dataset* negative_pool = nullptr;
};

/// Negative-distillation objective against a frozen teacher.
Objective distill_objective(const model::Parameters& teacher, const DistillOptions& options, std::uint64_t seed);

/// Trains on the negative set with MLE; returns the best-validation checkpoint.
TrainResult train_teacher(const corpus::Dataset& negative_set, const corpus::Dataset& valid,
                          const model::ModelConfig& model_config, const OptimConfig& optim,
                          double label_smoothing = 0.1);

/// Plain MLE baseline on the full set.
TrainResult train_mle(const corpus::Dataset& raw_set, const corpus::Dataset& valid,
                      const model::ModelConfig& model_config, const OptimConfig& optim,
                      double label_smoothing = 0.1);

/// Trains a fresh student against the frozen teacher. Architecture error when
/// the teacher was built with a different ModelConfig.
TrainResult distill_student(const corpus::Dataset& raw_set, const corpus::Dataset& valid,
                            const model::Parameters& teacher, const model::ModelConfig& model_config,
                            const OptimConfig& optim, const DistillOptions& options);

}  // namespace negdist::train
