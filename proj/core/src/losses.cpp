#include "negdist/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "negdist/error.hpp"

namespace negdist::loss {
namespace {

// Row weights realising "mean over valid rows of each example, then mean over
// examples". Throws UndefinedMean when an example has no valid row.
std::vector<double> row_weights(const ForwardTrace& trace) {
  const std::size_t rows = trace.valid.size();
  if (trace.segments.empty()) throw Error(ErrorKind::UndefinedMean, "loss over a trace without examples");
  std::vector<double> w(rows, 0.0);
  const double per_example = 1.0 / static_cast<double>(trace.segments.size());
  for (const auto& seg : trace.segments) {
    if (seg.offset + seg.length > rows) throw Error(ErrorKind::Shape, "trace segment exceeds its rows");
    std::size_t n = 0;
    for (std::size_t r = seg.offset; r < seg.offset + seg.length; ++r) n += trace.valid[r] != 0;
    if (n == 0) throw Error(ErrorKind::UndefinedMean, "loss over an example whose positions are all masked");
    for (std::size_t r = seg.offset; r < seg.offset + seg.length; ++r)
      if (trace.valid[r] != 0) w[r] = per_example / static_cast<double>(n);
  }
  return w;
}

void check_trace(const ForwardTrace& trace) {
  if (static_cast<std::size_t>(trace.logits.rows()) != trace.valid.size())
    throw Error(ErrorKind::Shape, "trace logits rows do not match its mask");
}

void check_aligned(const ForwardTrace& teacher, const ForwardTrace& student) {
  check_trace(teacher);
  check_trace(student);
  if (teacher.valid != student.valid || teacher.segments.size() != student.segments.size())
    throw Error(ErrorKind::Alignment, "teacher and student traces have different masks");
  for (std::size_t e = 0; e < teacher.segments.size(); ++e)
    if (teacher.segments[e].offset != student.segments[e].offset ||
        teacher.segments[e].length != student.segments[e].length)
      throw Error(ErrorKind::Alignment, "teacher and student traces have different segments");
}

RowVector log_softmax(const Eigen::Ref<const RowVector>& z, double temperature) {
  const double max = z.maxCoeff();
  RowVector shifted = ((z.array() - max) / temperature).matrix();
  const double lse = std::log(shifted.array().exp().sum());
  shifted.array() -= lse;
  return shifted;
}

}  // namespace

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw Error(ErrorKind::Config, "temperature must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 0.5))
    throw Error(ErrorKind::Config, "label_smoothing must lie in [0, 0.5)");
}

void ScheduleConfig::validate() const {
  if (fixed_alpha) {
    if (!(*fixed_alpha >= 0.0 && *fixed_alpha <= 1.0))
      throw Error(ErrorKind::Config, "fixed_alpha must lie in [0, 1]");
    return;
  }
  if (lambda < 0.0 || !std::isfinite(lambda)) throw Error(ErrorKind::Config, "lambda must be non-negative");
  if (lambda > 0.0 && !(beta > 0.0 && gamma > 0.0))
    throw Error(ErrorKind::Config, "beta and gamma must be positive for the progressive schedule");
  if (lambda > 4.0) throw Error(ErrorKind::Config, "lambda above 4 would push alpha past 1");
}

LossResult mle_loss(const ForwardTrace& trace, std::span<const TokenId> targets, double smoothing) {
  check_trace(trace);
  if (targets.size() != trace.valid.size())
    throw Error(ErrorKind::Alignment, "mle_loss: target count does not match trace rows");
  if (!(smoothing >= 0.0 && smoothing < 0.5)) throw Error(ErrorKind::Config, "label smoothing must lie in [0, 0.5)");
  const auto weights = row_weights(trace);
  const auto vocab = trace.logits.cols();
  const double off_target = vocab > 1 ? smoothing / static_cast<double>(vocab - 1) : 0.0;
  const double on_target = 1.0 - smoothing;

  LossResult out;
  out.grad.logits = Matrix::Zero(trace.logits.rows(), vocab);
  for (Eigen::Index r = 0; r < trace.logits.rows(); ++r) {
    const double w = weights[static_cast<std::size_t>(r)];
    if (w == 0.0) continue;
    const TokenId t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= vocab) throw Error(ErrorKind::Domain, "mle_loss: target id outside vocab");
    const RowVector logp = log_softmax(trace.logits.row(r), 1.0);
    double row_loss = -on_target * logp(t);
    if (off_target != 0.0) row_loss -= off_target * (logp.sum() - logp(t));
    out.value += w * row_loss;
    auto g = out.grad.logits.row(r);
    g = logp.array().exp().matrix();
    if (off_target != 0.0) g.array() -= off_target;
    g(t) -= on_target - off_target;
    g *= w;
  }
  return out;
}

LossResult ul_loss(const ForwardTrace& trace, const NegativeCandidateSet& candidates) {
  check_trace(trace);
  if (candidates.per_position.size() != trace.valid.size())
    throw Error(ErrorKind::Alignment, "ul_loss: candidate rows do not match trace rows");
  const auto weights = row_weights(trace);
  const auto vocab = trace.logits.cols();
  LossResult out;
  out.grad.logits = Matrix::Zero(trace.logits.rows(), vocab);
  for (Eigen::Index r = 0; r < trace.logits.rows(); ++r) {
    const double w = weights[static_cast<std::size_t>(r)];
    auto set = candidates.per_position[static_cast<std::size_t>(r)];
    if (w == 0.0 || set.empty()) continue;
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    const RowVector p = model::softmax_with_temperature(trace.logits.row(r), 1.0);
    auto g = out.grad.logits.row(r);
    for (TokenId c : set) {
      if (c < 0 || c >= vocab) throw Error(ErrorKind::Domain, "ul_loss: candidate id outside vocab");
      const double pc = p(c);
      if (pc >= kProbabilityClamp) {
        out.value -= w * std::log(1.0 - kProbabilityClamp);
        continue;
      }
      out.value -= w * std::log(1.0 - pc);
      // d/dz_j [-log(1 - p_c)] = p_c (delta_cj - p_j) / (1 - p_c)
      const double coef = w * pc / (1.0 - pc);
      g -= coef * p;
      g(c) += coef;
    }
  }
  return out;
}

LossResult kd_loss(const ForwardTrace& teacher, const ForwardTrace& student, double temperature) {
  check_aligned(teacher, student);
  if (!(temperature > 0.0)) throw Error(ErrorKind::Config, "temperature must be positive");
  const auto weights = row_weights(student);
  LossResult out;
  out.grad.logits = Matrix::Zero(student.logits.rows(), student.logits.cols());
  for (Eigen::Index r = 0; r < student.logits.rows(); ++r) {
    const double w = weights[static_cast<std::size_t>(r)];
    if (w == 0.0) continue;
    const RowVector pt = model::softmax_with_temperature(teacher.logits.row(r), temperature);
    const RowVector logps = log_softmax(student.logits.row(r), temperature);
    out.value -= w * pt.dot(logps);
    out.grad.logits.row(r) = (w / temperature) * (logps.array().exp().matrix() - pt);
  }
  return out;
}

LossResult soft_unlikelihood(const Matrix& target_probs, const ForwardTrace& student, double temperature) {
  check_trace(student);
  if (!(temperature > 0.0)) throw Error(ErrorKind::Config, "temperature must be positive");
  if (target_probs.rows() != student.logits.rows() || target_probs.cols() != student.logits.cols())
    throw Error(ErrorKind::Alignment, "soft_unlikelihood: target distribution shape does not match the trace");
  const auto weights = row_weights(student);
  LossResult out;
  out.grad.logits = Matrix::Zero(student.logits.rows(), student.logits.cols());
  for (Eigen::Index r = 0; r < student.logits.rows(); ++r) {
    const double w = weights[static_cast<std::size_t>(r)];
    if (w == 0.0) continue;
    const RowVector ps = model::softmax_with_temperature(student.logits.row(r), temperature);
    RowVector g = RowVector::Zero(ps.size());
    double row_loss = 0.0;
    for (Eigen::Index k = 0; k < ps.size(); ++k) {
      const double q = target_probs(r, k);
      if (q == 0.0) continue;
      if (ps(k) >= kProbabilityClamp) {
        row_loss -= q * std::log(1.0 - kProbabilityClamp);
      } else {
        row_loss -= q * std::log(1.0 - ps(k));
        g(k) = q / (1.0 - ps(k));
      }
    }
    out.value += w * row_loss;
    // dL/dz_j = (1/t) p_j (g_j - sum_k g_k p_k)
    const double mean_g = g.dot(ps);
    out.grad.logits.row(r) = (w / temperature) * (ps.array() * (g.array() - mean_g)).matrix();
  }
  return out;
}

LossResult nd_pred_loss(const ForwardTrace& teacher, const ForwardTrace& student, double temperature) {
  check_aligned(teacher, student);
  return soft_unlikelihood(model::softmax_rows(teacher.logits, temperature), student, temperature);
}

Matrix hard_targets(const ForwardTrace& teacher) {
  Matrix out = Matrix::Zero(teacher.logits.rows(), teacher.logits.cols());
  for (Eigen::Index r = 0; r < teacher.logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < teacher.logits.cols(); ++k)
      if (teacher.logits(r, k) > teacher.logits(r, best)) best = k;
    out(r, best) = 1.0;
  }
  return out;
}

MrseResult mrse(const Matrix& a, const Matrix& b, const Mask& mask) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || mask.rows() != a.rows() || mask.cols() != a.cols())
    throw Error(ErrorKind::Shape, "mrse: operand and mask shapes differ");
  const auto n = mask.count();
  if (n == 0) throw Error(ErrorKind::UndefinedMean, "mrse over zero valid elements");
  const double inv_n = 1.0 / static_cast<double>(n);
  MrseResult out;
  out.grad = Matrix::Zero(a.rows(), a.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!mask.data()[i]) continue;
    const double d = a.data()[i] - b.data()[i];
    const double e = std::exp(-d * d);
    sum += e;
    out.grad.data()[i] = 2.0 * d * e * inv_n;
  }
  out.value = sum / static_cast<double>(n);
  return out;
}

LossResult nd_hidden_loss(const ForwardTrace& teacher, const ForwardTrace& student) {
  check_aligned(teacher, student);
  if (teacher.decoder_hidden.size() != student.decoder_hidden.size())
    throw Error(ErrorKind::Architecture, "nd_hidden_loss: teacher has " + std::to_string(teacher.decoder_hidden.size()) +
                                             " decoder layers, student " +
                                             std::to_string(student.decoder_hidden.size()));
  const double per_example = 1.0 / static_cast<double>(student.segments.size());
  LossResult out;
  out.grad.decoder_hidden.resize(student.decoder_hidden.size());
  for (std::size_t l = 0; l < student.decoder_hidden.size(); ++l) {
    const Matrix& hn = teacher.decoder_hidden[l];
    const Matrix& hs = student.decoder_hidden[l];
    if (hn.rows() != hs.rows() || hn.cols() != hs.cols())
      throw Error(ErrorKind::Architecture, "nd_hidden_loss: hidden-state shapes differ");
    Matrix& grad = out.grad.decoder_hidden[l];
    grad = Matrix::Zero(hs.rows(), hs.cols());
    for (const auto& seg : student.segments) {
      const auto off = static_cast<Eigen::Index>(seg.offset);
      const auto len = static_cast<Eigen::Index>(seg.length);
      Mask mask(len, hs.cols());
      for (Eigen::Index i = 0; i < len; ++i) mask.row(i).setConstant(student.valid[seg.offset + i] != 0);
      const auto res = mrse(hn.middleRows(off, len), hs.middleRows(off, len), mask);
      out.value += per_example * res.value;
      grad.middleRows(off, len) = per_example * res.grad;
    }
  }
  return out;
}

LossResult nd_attention_loss(const ForwardTrace& teacher, const ForwardTrace& student) {
  check_aligned(teacher, student);
  const auto& an = teacher.decoder_self_attention_scores;
  const auto& as = student.decoder_self_attention_scores;
  if (an.size() != as.size())
    throw Error(ErrorKind::Architecture, "nd_attention_loss: decoder layer counts differ");
  const std::size_t examples = student.segments.size();
  const double per_example = 1.0 / static_cast<double>(examples);
  LossResult out;
  out.grad.decoder_self_attention_scores.resize(as.size());
  for (std::size_t l = 0; l < as.size(); ++l) {
    if (an[l].size() != examples || as[l].size() != examples)
      throw Error(ErrorKind::Alignment, "nd_attention_loss: attention scores do not cover every example");
    auto& grad_l = out.grad.decoder_self_attention_scores[l];
    grad_l.resize(examples);
    for (std::size_t e = 0; e < examples; ++e) {
      if (an[l][e].size() != as[l][e].size())
        throw Error(ErrorKind::Architecture, "nd_attention_loss: head counts differ (" +
                                                 std::to_string(an[l][e].size()) + " vs " +
                                                 std::to_string(as[l][e].size()) + ")");
      const std::size_t heads = as[l][e].size();
      const auto len = static_cast<Eigen::Index>(student.segments[e].length);
      // Pool every head's valid entries into one mean.
      Mask entry(len, len);
      for (Eigen::Index i = 0; i < len; ++i)
        for (Eigen::Index j = 0; j < len; ++j)
          entry(i, j) = student.self_attention_valid(e, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      const auto per_head = entry.count();
      if (per_head == 0) throw Error(ErrorKind::UndefinedMean, "nd_attention_loss: no valid attention entries");
      const double head_share = 1.0 / static_cast<double>(heads);
      grad_l[e].resize(heads);
      for (std::size_t h = 0; h < heads; ++h) {
        const Matrix& a = an[l][e][h];
        const Matrix& b = as[l][e][h];
        if (a.rows() != len || b.rows() != len || a.cols() != len || b.cols() != len)
          throw Error(ErrorKind::Shape, "nd_attention_loss: score matrix shape does not match its segment");
        const auto res = mrse(a, b, entry);
        out.value += per_example * head_share * res.value;
        grad_l[e][h] = (per_example * head_share) * res.grad;
      }
    }
  }
  return out;
}

double alpha_schedule(std::int64_t step, const ScheduleConfig& config) {
  if (config.fixed_alpha) return *config.fixed_alpha;
  if (step < 0) throw Error(ErrorKind::Domain, "alpha_schedule: negative step");
  const double z = config.beta * (static_cast<double>(step) - config.gamma);
  // e^-z / (e^-z + 1)^2 is even in z; evaluate on |z| so it never overflows.
  const double e = std::exp(-std::abs(z));
  return config.lambda * e / ((e + 1.0) * (e + 1.0));
}

CombinedResult combined_loss(const ForwardTrace& student, const ForwardTrace& teacher, double alpha,
                             const DistillConfig& config, const Matrix* random_targets) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::Config, "alpha must lie in [0, 1]");
  config.validate();
  CombinedResult out;
  auto& b = out.breakdown;
  b.alpha = alpha;
  const double mle_weight = 1.0 - alpha;

  auto mle = mle_loss(student, config.label_smoothing);
  b.mle = mle.value;
  b.mle_term = mle_weight * mle.value;
  if (mle_weight != 0.0) out.grad.add_scaled(mle.grad, mle_weight);

  auto take = [&](LossResult&& r, double& raw, double& term) {
    raw = r.value;
    term = alpha * r.value;
    if (alpha != 0.0) out.grad.add_scaled(r.grad, alpha);
  };
  if (config.include_pred) {
    switch (config.target) {
      case NegativeTarget::Soft:
        take(nd_pred_loss(teacher, student, config.temperature), b.pred, b.pred_term);
        break;
      case NegativeTarget::Hard:
        check_aligned(teacher, student);
        take(soft_unlikelihood(hard_targets(teacher), student, config.temperature), b.pred, b.pred_term);
        break;
      case NegativeTarget::Random:
        if (random_targets == nullptr)
          throw Error(ErrorKind::Config, "random negative targets requested but none supplied");
        take(soft_unlikelihood(*random_targets, student, config.temperature), b.pred, b.pred_term);
        break;
    }
  }
  if (config.include_hidden) take(nd_hidden_loss(teacher, student), b.hidden, b.hidden_term);
  if (config.include_attention) take(nd_attention_loss(teacher, student), b.attention, b.attention_term);
  b.total = b.mle_term + b.pred_term + b.hidden_term + b.attention_term;
  return out;
}

}  // namespace negdist::loss
