#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace negdist::testing {

model::ModelConfig tiny_config(std::size_t vocab, double dropout) {
  model::ModelConfig c;
  c.num_encoder_layers = 2;
  c.num_decoder_layers = 2;
  c.num_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.d_k = 8;
  c.vocab_size = vocab;
  c.max_sequence_length = 16;
  c.dropout_rate = dropout;
  return c;
}

std::vector<model::Example> Batch::examples() const {
  std::vector<model::Example> out;
  for (std::size_t i = 0; i < queries.size(); ++i) out.push_back({queries[i], responses[i]});
  return out;
}

Batch random_batch(std::mt19937_64& rng, std::size_t vocab, std::size_t count, std::size_t min_len,
                   std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<TokenId> tok(static_cast<TokenId>(corpus::Vocab::kReservedCount),
                                             static_cast<TokenId>(vocab - 1));
  Batch b;
  for (std::size_t i = 0; i < count; ++i) {
    TokenSequence q(len(rng)), r(len(rng));
    for (auto& t : q) t = tok(rng);
    for (auto& t : r) t = tok(rng);
    b.queries.push_back(std::move(q));
    b.responses.push_back(std::move(r));
  }
  return b;
}

corpus::Dataset random_dialogue_dataset(std::mt19937_64& rng, std::size_t pairs) {
  std::uniform_int_distribution<int> query_pool(0, 29), response_pool(0, 9), spacing(0, 2);
  corpus::Dataset d;
  for (std::size_t i = 0; i < pairs; ++i) {
    // Irregular whitespace and case exercise normalization.
    const int q = query_pool(rng), r = response_pool(rng);
    std::string query = "Q" + std::to_string(q) + std::string(1 + spacing(rng), ' ') + "w";
    std::string response = (spacing(rng) == 0 ? "  R" : "r") + std::to_string(r) + " end";
    d.pairs.push_back({query, response, {}, {}});
  }
  return d;
}

metrics::Corpus random_corpus(std::mt19937_64& rng, std::size_t sentences, std::size_t alphabet,
                              std::size_t max_len, bool allow_empty) {
  std::uniform_int_distribution<std::size_t> len(allow_empty ? 0 : 1, max_len);
  std::uniform_int_distribution<std::size_t> sym(0, alphabet - 1);
  metrics::Corpus c;
  for (std::size_t i = 0; i < sentences; ++i) {
    metrics::Sentence s(len(rng));
    for (auto& t : s) t = "t" + std::to_string(sym(rng));
    c.push_back(std::move(s));
  }
  return c;
}

RowVector ToyModel::logits(std::span<const TokenId> prefix) const {
  const std::vector<TokenId> key(prefix.begin(), prefix.end());
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  std::uint64_t h = seed_;
  for (TokenId t : key) h = h * 1000003ULL + static_cast<std::uint64_t>(t) + 1;
  std::mt19937_64 rng(h ^ (key.size() * 0x9E3779B97F4A7C15ULL));
  std::normal_distribution<double> n(0.0, scale_);
  RowVector z(static_cast<Eigen::Index>(vocab_));
  for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = n(rng);
  cache_.emplace(key, z);
  return z;
}

namespace {

struct Setup {
  model::ModelConfig config;
  model::Parameters teacher;
  Batch batch;
  model::ForwardTrace teacher_trace;
  loss::NegativeCandidateSet candidates;
  Matrix random_targets;
  std::uint64_t dropout_seed;
};

model::ForwardPass student_pass(const model::Parameters& p, const Setup& s) {
  const auto ex = s.batch.examples();
  return model::forward(p, ex, model::Mode::Train, {s.dropout_seed, false});
}

GradCase make_case(std::string name, std::shared_ptr<const Setup> setup,
                   std::function<loss::LossResult(const model::ForwardTrace&, const Setup&)> f) {
  GradCase c;
  c.name = std::move(name);
  c.value = [setup, f](const model::Parameters& p) { return f(student_pass(p, *setup).trace, *setup).value; };
  c.gradient = [setup, f](const model::Parameters& p) {
    const auto pass = student_pass(p, *setup);
    const auto r = f(pass.trace, *setup);
    model::Parameters g = p.zeros_like();
    model::backward(p, pass, r.grad, g);
    return g;
  };
  return c;
}

}  // namespace

std::vector<GradCase> gradient_cases(std::uint64_t seed) {
  auto setup = std::make_shared<Setup>(Setup{tiny_config(), model::Parameters(tiny_config()), {}, {}, {}, {}, 0});
  std::mt19937_64 rng(seed);
  setup->teacher = model::init_parameters(setup->config, seed + 1000);
  setup->batch = random_batch(rng, setup->config.vocab_size, 3, 2, 5);
  // A PAD inside one response exercises truncation at the first PAD.
  setup->batch.responses[1].push_back(corpus::Vocab::kPad);
  setup->batch.responses[1].push_back(5);
  setup->dropout_seed = seed * 31 + 7;
  const auto ex = setup->batch.examples();
  setup->teacher_trace = model::forward(setup->teacher, ex, model::Mode::Eval).trace;
  const auto rows = static_cast<std::size_t>(setup->teacher_trace.logits.rows());
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(setup->config.vocab_size - 1));
  setup->candidates.per_position.resize(rows);
  for (auto& set : setup->candidates.per_position)
    for (int k = 0; k < 3; ++k) set.push_back(tok(rng));
  setup->random_targets = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(setup->config.vocab_size));
  for (Eigen::Index r = 0; r < setup->random_targets.rows(); ++r) setup->random_targets(r, tok(rng)) = 1.0;
  std::shared_ptr<const Setup> s = setup;

  auto combined = [](loss::NegativeTarget target) {
    return [target](const model::ForwardTrace& t, const Setup& s) {
      loss::DistillConfig cfg;
      cfg.temperature = 2.0;
      cfg.target = target;
      const auto r = loss::combined_loss(t, s.teacher_trace, 0.6, cfg, &s.random_targets);
      return loss::LossResult{r.breakdown.total, r.grad};
    };
  };

  return {
      make_case("mle_loss", s, [](const model::ForwardTrace& t, const Setup&) { return loss::mle_loss(t, 0.1); }),
      make_case("ul_loss", s,
                [](const model::ForwardTrace& t, const Setup& s) { return loss::ul_loss(t, s.candidates); }),
      make_case("kd_loss", s,
                [](const model::ForwardTrace& t, const Setup& s) { return loss::kd_loss(s.teacher_trace, t, 2.0); }),
      make_case("nd_pred_loss", s,
                [](const model::ForwardTrace& t, const Setup& s) {
                  return loss::nd_pred_loss(s.teacher_trace, t, 2.0);
                }),
      make_case("nd_hidden_loss", s,
                [](const model::ForwardTrace& t, const Setup& s) { return loss::nd_hidden_loss(s.teacher_trace, t); }),
      make_case("nd_attention_loss", s,
                [](const model::ForwardTrace& t, const Setup& s) {
                  return loss::nd_attention_loss(s.teacher_trace, t);
                }),
      make_case("combined_loss", s, combined(loss::NegativeTarget::Soft)),
      make_case("combined_loss_hard", s, combined(loss::NegativeTarget::Hard)),
      make_case("combined_loss_random", s, combined(loss::NegativeTarget::Random)),
  };
}

GradCheckReport check_gradient(const GradCase& c, const model::Parameters& params, std::size_t count,
                               std::uint64_t seed, double step, double tolerance, double floor) {
  GradCheckReport report;
  const model::Parameters analytic = c.gradient(params);
  model::Parameters probe = params;
  auto tensors = probe.tensors();
  const auto grads = analytic.tensors();
  const auto names = probe.names();
  std::vector<std::pair<std::size_t, Eigen::Index>> index;
  for (std::size_t t = 0; t < tensors.size(); ++t)
    for (Eigen::Index i = 0; i < tensors[t]->size(); ++i) index.emplace_back(t, i);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, index.size() - 1);
  for (std::size_t k = 0; k < count; ++k) {
    const auto [t, i] = index[pick(rng)];
    double& x = tensors[t]->data()[i];
    const double saved = x;
    x = saved + step;
    const double up = c.value(probe);
    x = saved - step;
    const double down = c.value(probe);
    x = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = grads[t]->data()[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    ++report.checked;
    if (rel > tolerance) ++report.failures;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      std::ostringstream w;
      w << names[t] << "[" << i << "] analytic " << a << " numeric " << numeric;
      report.worst = w.str();
    }
  }
  return report;
}

}  // namespace negdist::testing
