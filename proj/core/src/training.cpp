#include "negdist/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "negdist/checkpoint.hpp"
#include "negdist/error.hpp"

namespace negdist::train {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Exact text round trip for doubles.
std::string hex_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

double parse_double(const std::string& text) {
  char* end = nullptr;
  const double x = std::strtod(text.c_str(), &end);
  if (end == text.c_str()) throw Error(ErrorKind::Data, "train state: malformed number '" + text + "'");
  return x;
}

std::uint64_t parse_u64(const std::string& text) {
  char* end = nullptr;
  const auto x = std::strtoull(text.c_str(), &end, 10);
  if (end == text.c_str()) throw Error(ErrorKind::Data, "train state: malformed integer '" + text + "'");
  return x;
}

void accumulate(loss::LossBreakdown& into, const loss::LossBreakdown& b) {
  into.mle += b.mle;
  into.pred += b.pred;
  into.hidden += b.hidden;
  into.attention += b.attention;
  into.mle_term += b.mle_term;
  into.pred_term += b.pred_term;
  into.hidden_term += b.hidden_term;
  into.attention_term += b.attention_term;
  into.total += b.total;
}

loss::LossBreakdown scaled(loss::LossBreakdown b, double s) {
  b.mle *= s;
  b.pred *= s;
  b.hidden *= s;
  b.attention *= s;
  b.mle_term *= s;
  b.pred_term *= s;
  b.hidden_term *= s;
  b.attention_term *= s;
  b.total *= s;
  return b;
}

// One-hot rows cycling through a randomly drawn negative response (+ EOS)
// for every example of the batch.
Matrix random_negative_targets(const model::ForwardTrace& trace, const corpus::Dataset& pool, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  Matrix out = Matrix::Zero(trace.logits.rows(), trace.logits.cols());
  for (const auto& seg : trace.segments) {
    TokenSequence seq = pool.pairs[pick(rng)].response;
    seq.push_back(corpus::Vocab::kEos);
    for (std::size_t i = 0; i < seg.length; ++i) {
      const TokenId t = seq[i % seq.size()];
      if (t < 0 || t >= trace.logits.cols())
        throw Error(ErrorKind::Domain, "random negative target outside the model vocab");
      out(static_cast<Eigen::Index>(seg.offset + i), t) = 1.0;
    }
  }
  return out;
}

}  // namespace

void OptimConfig::validate() const {
  if (warmup_steps < 1) throw Error(ErrorKind::Config, "warmup_steps must be at least 1");
  if (batch_size < 1) throw Error(ErrorKind::Config, "batch_size must be at least 1");
  if (max_steps < 1) throw Error(ErrorKind::Config, "max_steps must be at least 1");
  if (d_model < 1) throw Error(ErrorKind::Config, "d_model must be at least 1");
  if (validation_interval < 1) throw Error(ErrorKind::Config, "validation_interval must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw Error(ErrorKind::Config, "adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw Error(ErrorKind::Config, "adam epsilon must be positive");
}

double lr_schedule(std::int64_t step, const OptimConfig& config) {
  if (step < 1) throw Error(ErrorKind::Domain, "lr_schedule: step must be at least 1");
  const double s = static_cast<double>(step);
  const double wp = static_cast<double>(config.warmup_steps);
  const double rising = s / std::sqrt(wp * wp * wp);
  const double decay = 1.0 / std::sqrt(s);
  return 2.0 * std::min(decay, rising) / std::sqrt(static_cast<double>(config.d_model));
}

Adam::Adam(const model::Parameters& like, const OptimConfig& config)
    : beta1_(config.beta1), beta2_(config.beta2), epsilon_(config.epsilon), m_(like.config), v_(like.config) {}

void Adam::step(model::Parameters& params, const model::Parameters& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  if (p.size() != g.size() || p.size() != m.size()) throw Error(ErrorKind::Shape, "adam: parameter layout mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto ga = g[i]->array();
    m[i]->array() = beta1_ * m[i]->array() + (1.0 - beta1_) * ga;
    v[i]->array() = beta2_ * v[i]->array() + (1.0 - beta2_) * ga * ga;
    p[i]->array() -= lr * (m[i]->array() / bc1) / ((v[i]->array() / bc2).sqrt() + epsilon_);
    *p[i] = p[i]->cast<float>().cast<double>();
  }
}

void Adam::restore(std::int64_t t, model::Parameters m, model::Parameters v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

std::vector<std::vector<std::size_t>> epoch_batches(const corpus::Dataset& data, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw Error(ErrorKind::Config, "batch_size must be at least 1");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  auto length = [&](std::size_t i) { return data.pairs[i].query.size() + data.pairs[i].response.size(); };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return length(a) < length(b); });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

std::vector<model::Example> as_examples(const corpus::Dataset& data, std::span<const std::size_t> indices) {
  std::vector<model::Example> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back({data.pairs.at(i).query, data.pairs.at(i).response});
  return out;
}

double validation_loss(const model::Parameters& params, const corpus::Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw Error(ErrorKind::EmptyInput, "validation set is empty");
  if (batch_size == 0) throw Error(ErrorKind::Config, "batch_size must be at least 1");
  double sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto batch = as_examples(data, idx);
    const auto pass = model::forward(params, batch, model::Mode::Eval);
    sum += loss::mle_loss(pass.trace, 0.0).value * static_cast<double>(batch.size());
  }
  return sum / static_cast<double>(data.size());
}

void write_log_header(std::ostream& out) { out << "step,train_loss,valid_loss,alpha,lr,mle,pred,hidden,attention\n"; }

void write_log_line(std::ostream& out, const ValidationRecord& r) {
  const auto old = out.precision(10);
  out << r.step << ',' << r.train_loss << ',' << r.valid_loss << ',' << r.alpha << ',' << r.lr << ','
      << r.breakdown.mle << ',' << r.breakdown.pred << ',' << r.breakdown.hidden << ',' << r.breakdown.attention
      << '\n';
  out.precision(old);
}

Trainer::Trainer(const model::ModelConfig& model_config, const OptimConfig& optim, const corpus::Dataset& train,
                 const corpus::Dataset& valid, Objective objective)
    : model_config_(model_config),
      optim_(optim),
      train_(&train),
      valid_(valid.empty() ? &train : &valid),
      objective_(std::move(objective)),
      adam_(model::Parameters(model_config), optim),
      state_(model_config) {
  model_config_.validate();
  optim_.validate();
  if (optim_.d_model != model_config_.d_model)
    throw Error(ErrorKind::Config, "optimizer d_model " + std::to_string(optim_.d_model) +
                                       " differs from model d_model " + std::to_string(model_config_.d_model));
  if (train.empty()) throw Error(ErrorKind::EmptyInput, "training set is empty");
  state_.params = model::init_parameters(model_config_, optim_.seed);
  state_.best_params = state_.params;
  epoch_ = epoch_batches(*train_, optim_.batch_size, optim_.seed, state_.epoch);
}

bool Trainer::finished() const noexcept {
  return state_.stopped || state_.step >= static_cast<std::int64_t>(optim_.max_steps);
}

bool Trainer::step() {
  if (finished()) return false;
  if (state_.batch_cursor >= epoch_.size()) {
    ++state_.epoch;
    state_.batch_cursor = 0;
    epoch_ = epoch_batches(*train_, optim_.batch_size, optim_.seed, state_.epoch);
  }
  const std::int64_t s = state_.step + 1;
  const auto batch = as_examples(*train_, epoch_[state_.batch_cursor]);
  model::Parameters grads(model_config_);
  const auto outcome = objective_(state_.params, batch, s, mix_seed(optim_.seed, 1, static_cast<std::uint64_t>(s)), grads);
  if (!std::isfinite(outcome.breakdown.total)) throw Error(ErrorKind::Numeric, "non-finite loss at step " + std::to_string(s));
  adam_.step(state_.params, grads, lr_schedule(s, optim_));
  if (!state_.params.all_finite()) throw Error(ErrorKind::Numeric, "non-finite parameters after step " + std::to_string(s));

  ++state_.batch_cursor;
  state_.step = s;
  step_alpha_.push_back(outcome.breakdown.alpha);
  accumulate(state_.pending, outcome.breakdown);
  state_.pending.alpha = outcome.breakdown.alpha;
  ++state_.pending_steps;
  if (s % static_cast<std::int64_t>(optim_.validation_interval) == 0 ||
      s == static_cast<std::int64_t>(optim_.max_steps))
    validate_now();
  return !finished();
}

void Trainer::validate_now() {
  ValidationRecord r;
  r.step = state_.step;
  r.valid_loss = validation_loss(state_.params, *valid_, optim_.batch_size);
  if (!std::isfinite(r.valid_loss)) throw Error(ErrorKind::Numeric, "non-finite validation loss");
  const double inv = state_.pending_steps == 0 ? 0.0 : 1.0 / static_cast<double>(state_.pending_steps);
  r.breakdown = scaled(state_.pending, inv);
  r.breakdown.alpha = state_.pending.alpha;
  r.train_loss = r.breakdown.total;
  r.alpha = state_.pending.alpha;
  r.lr = lr_schedule(state_.step, optim_);
  state_.pending = {};
  state_.pending_steps = 0;

  if (r.valid_loss < state_.best_valid_loss) {
    state_.best_valid_loss = r.valid_loss;
    state_.best_step = state_.step;
    state_.best_params = state_.params;
    state_.since_improvement = 0;
  } else {
    ++state_.since_improvement;
    if (optim_.patience > 0 && state_.since_improvement >= optim_.patience) state_.stopped = true;
  }
  log_.push_back(r);
  if (sink_) sink_(r);
}

TrainResult Trainer::result() const {
  TrainResult out(model_config_);
  out.best = state_.best_step > 0 ? state_.best_params : state_.params;
  out.best_valid_loss = state_.best_valid_loss;
  out.best_step = state_.best_step;
  out.steps_run = state_.step;
  out.early_stopped = state_.stopped;
  out.log = log_;
  out.step_alpha = step_alpha_;
  return out;
}

TrainResult Trainer::run() {
  while (step()) {
  }
  return result();
}

void Trainer::save_state(const std::filesystem::path& path) const {
  checkpoint::TensorFile file;
  file.header.emplace_back("kind", "train-state");
  for (auto& kv : checkpoint::config_header(model_config_)) file.header.push_back(std::move(kv));
  auto put = [&](const char* key, std::string value) { file.header.emplace_back(key, std::move(value)); };
  put("seed", std::to_string(optim_.seed));
  put("step", std::to_string(state_.step));
  put("adam_steps", std::to_string(adam_.steps_taken()));
  put("best_valid_loss", hex_double(state_.best_valid_loss));
  put("best_step", std::to_string(state_.best_step));
  put("since_improvement", std::to_string(state_.since_improvement));
  put("epoch", std::to_string(state_.epoch));
  put("batch_cursor", std::to_string(state_.batch_cursor));
  put("pending_steps", std::to_string(state_.pending_steps));
  const auto& p = state_.pending;
  put("pending", hex_double(p.mle) + "," + hex_double(p.pred) + "," + hex_double(p.hidden) + "," +
                     hex_double(p.attention) + "," + hex_double(p.mle_term) + "," + hex_double(p.pred_term) + "," +
                     hex_double(p.hidden_term) + "," + hex_double(p.attention_term) + "," + hex_double(p.total) +
                     "," + hex_double(p.alpha));
  put("stopped", state_.stopped ? "1" : "0");
  checkpoint::append_parameters(file, state_.params, checkpoint::DType::F64, "params.");
  checkpoint::append_parameters(file, state_.best_params, checkpoint::DType::F64, "best.");
  checkpoint::append_parameters(file, adam_.first_moment(), checkpoint::DType::F64, "adam_m.");
  checkpoint::append_parameters(file, adam_.second_moment(), checkpoint::DType::F64, "adam_v.");
  checkpoint::save_tensor_file(path, file);
}

void Trainer::load_state(const std::filesystem::path& path) {
  const auto file = checkpoint::load_tensor_file(path);
  if (file.find("kind") != std::optional<std::string>("train-state"))
    throw Error(ErrorKind::Data, path.string() + " is not a training-state file");
  if (checkpoint::config_from_header(file) != model_config_)
    throw Error(ErrorKind::Architecture, "training state was saved for a different model configuration");
  if (parse_u64(file.at("seed")) != optim_.seed)
    throw Error(ErrorKind::Config, "training state was saved with a different seed");
  TrainState st(model_config_);
  st.step = static_cast<std::int64_t>(parse_u64(file.at("step")));
  st.best_valid_loss = parse_double(file.at("best_valid_loss"));
  st.best_step = static_cast<std::int64_t>(parse_u64(file.at("best_step")));
  st.since_improvement = parse_u64(file.at("since_improvement"));
  st.epoch = parse_u64(file.at("epoch"));
  st.batch_cursor = parse_u64(file.at("batch_cursor"));
  st.pending_steps = parse_u64(file.at("pending_steps"));
  st.stopped = file.at("stopped") == "1";
  {
    const std::string& text = file.at("pending");
    std::vector<double> v;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto comma = text.find(',', start);
      v.push_back(parse_double(text.substr(start, comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (v.size() != 10) throw Error(ErrorKind::Data, "train state: malformed pending sums");
    st.pending = {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
  }
  checkpoint::extract_parameters(file, st.params, "params.");
  checkpoint::extract_parameters(file, st.best_params, "best.");
  model::Parameters m(model_config_), v(model_config_);
  checkpoint::extract_parameters(file, m, "adam_m.");
  checkpoint::extract_parameters(file, v, "adam_v.");
  adam_.restore(static_cast<std::int64_t>(parse_u64(file.at("adam_steps"))), std::move(m), std::move(v));
  state_ = std::move(st);
  epoch_ = epoch_batches(*train_, optim_.batch_size, optim_.seed, state_.epoch);
  log_.clear();
  step_alpha_.clear();
}

Objective mle_objective(double label_smoothing) {
  return [label_smoothing](const model::Parameters& params, std::span<const model::Example> batch, std::int64_t,
                           std::uint64_t dropout_seed, model::Parameters& grads) {
    const auto pass = model::forward(params, batch, model::Mode::Train, {dropout_seed, false});
    const auto r = loss::mle_loss(pass.trace, label_smoothing);
    model::backward(params, pass, r.grad, grads);
    StepOutcome out;
    out.breakdown.mle = r.value;
    out.breakdown.mle_term = r.value;
    out.breakdown.total = r.value;
    return out;
  };
}

Objective distill_objective(const model::Parameters& teacher, const DistillOptions& options, std::uint64_t seed) {
  options.schedule.validate();
  options.distill.validate();
  if (options.distill.target == loss::NegativeTarget::Random && options.distill.include_pred &&
      (options.negative_pool == nullptr || options.negative_pool->empty()))
    throw Error(ErrorKind::Config, "random negative targets need a non-empty negative pool");
  return [&teacher, options, seed](const model::Parameters& params, std::span<const model::Example> batch,
                                   std::int64_t step, std::uint64_t dropout_seed, model::Parameters& grads) {
    const double alpha = loss::alpha_schedule(step, options.schedule);
    const auto teacher_pass = model::forward(teacher, batch, model::Mode::Eval);
    const auto student_pass = model::forward(params, batch, model::Mode::Train, {dropout_seed, false});
    Matrix random_targets;
    const Matrix* random_ptr = nullptr;
    if (options.distill.target == loss::NegativeTarget::Random && options.distill.include_pred) {
      random_targets = random_negative_targets(student_pass.trace, *options.negative_pool,
                                               mix_seed(seed, 2, static_cast<std::uint64_t>(step)));
      random_ptr = &random_targets;
    }
    const auto r = loss::combined_loss(student_pass.trace, teacher_pass.trace, alpha, options.distill, random_ptr);
    model::backward(params, student_pass, r.grad, grads);
    return StepOutcome{r.breakdown};
  };
}

TrainResult train_teacher(const corpus::Dataset& negative_set, const corpus::Dataset& valid,
                          const model::ModelConfig& model_config, const OptimConfig& optim, double label_smoothing) {
  if (negative_set.empty()) throw Error(ErrorKind::EmptyInput, "negative training set is empty");
  Trainer trainer(model_config, optim, negative_set, valid, mle_objective(label_smoothing));
  return trainer.run();
}

TrainResult train_mle(const corpus::Dataset& raw_set, const corpus::Dataset& valid,
                      const model::ModelConfig& model_config, const OptimConfig& optim, double label_smoothing) {
  Trainer trainer(model_config, optim, raw_set, valid, mle_objective(label_smoothing));
  return trainer.run();
}

TrainResult distill_student(const corpus::Dataset& raw_set, const corpus::Dataset& valid,
                            const model::Parameters& teacher, const model::ModelConfig& model_config,
                            const OptimConfig& optim, const DistillOptions& options) {
  if (!(teacher.config == model_config))
    throw Error(ErrorKind::Architecture, "teacher and student model configurations differ");
  Trainer trainer(model_config, optim, raw_set, valid, distill_objective(teacher, options, optim.seed));
  return trainer.run();
}

}  // namespace negdist::train
