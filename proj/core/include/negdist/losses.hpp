#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "negdist/model.hpp"
#include "negdist/types.hpp"

namespace negdist::loss {

using model::ForwardTrace;
using model::TraceGradient;

/// Upper clamp for probabilities inside log(1 - p).
inline constexpr double kProbabilityClamp = 1.0 - 1e-7;

/// What the prediction-layer negative term pushes the student away from.
enum class NegativeTarget {
  Soft,    // the teacher's softened distribution
  Hard,    // one-hot on the teacher's argmax at each position
  Random,  // one-hot on tokens of a response drawn from the negative set
};

struct DistillConfig {
  double temperature = 1.0;
  bool include_pred = true;
  bool include_hidden = true;
  bool include_attention = true;
  /// Applies to the MLE term only.
  double label_smoothing = 0.1;
  NegativeTarget target = NegativeTarget::Soft;

  void validate() const;
};

/// Progressive weight alpha(s) = lambda * e^-z / (e^-z + 1)^2, z = beta * (s - gamma).
struct ScheduleConfig {
  double lambda = 4.0;
  double beta = 6.0 / 400.0;
  double gamma = 400.0;
  std::optional<double> fixed_alpha;

  void validate() const;
};

/// Tokens penalized at each stacked trace row.
struct NegativeCandidateSet {
  std::vector<std::vector<TokenId>> per_position;
};

/// Loss value with its gradient with respect to the (student) trace. Batch
/// losses are means over valid rows of each example, then over examples.
struct LossResult {
  double value = 0.0;
  TraceGradient grad;
};

LossResult mle_loss(const ForwardTrace& trace, std::span<const TokenId> targets, double smoothing);
inline LossResult mle_loss(const ForwardTrace& trace, double smoothing) {
  return mle_loss(trace, trace.targets, smoothing);
}

/// Token-level unlikelihood: mean over positions of sum_c -log(1 - p(c)).
LossResult ul_loss(const ForwardTrace& trace, const NegativeCandidateSet& candidates);

/// Positive distillation: -sum_k p_T(k) log p_S(k), both softened by t.
LossResult kd_loss(const ForwardTrace& teacher, const ForwardTrace& student, double temperature);

/// Soft unlikelihood against the teacher: -sum_k p_N(k) log(1 - p_S(k)).
LossResult nd_pred_loss(const ForwardTrace& teacher, const ForwardTrace& student, double temperature);

/// Soft unlikelihood against explicit per-row target distributions.
LossResult soft_unlikelihood(const Matrix& target_probs, const ForwardTrace& student, double temperature);

struct MrseResult {
  double value = 0.0;
  Matrix grad;  // d value / d b
};

/// Mean over mask-true elements of exp(-(a_i - b_i)^2).
MrseResult mrse(const Matrix& a, const Matrix& b, const Mask& mask);

/// Sum over decoder layers of the hidden-state MRSE on unpadded rows.
LossResult nd_hidden_loss(const ForwardTrace& teacher, const ForwardTrace& student);

/// Sum over decoder layers of the self-attention score MRSE over causally
/// valid entries, heads pooled.
LossResult nd_attention_loss(const ForwardTrace& teacher, const ForwardTrace& student);

double alpha_schedule(std::int64_t step, const ScheduleConfig& config);

struct LossBreakdown {
  // Unweighted component values.
  double mle = 0.0;
  double pred = 0.0;
  double hidden = 0.0;
  double attention = 0.0;
  // Weighted contributions; they sum to total.
  double mle_term = 0.0;
  double pred_term = 0.0;
  double hidden_term = 0.0;
  double attention_term = 0.0;
  double total = 0.0;
  double alpha = 0.0;
};

struct CombinedResult {
  LossBreakdown breakdown;
  TraceGradient grad;
};

/// (1 - alpha) L_mle + alpha (L_pred + sum_l L_hid + sum_l L_att) with each
/// negative term gated by its toggle. `random_targets` supplies the one-hot
/// rows for NegativeTarget::Random (ignored otherwise).
CombinedResult combined_loss(const ForwardTrace& student, const ForwardTrace& teacher, double alpha,
                             const DistillConfig& config, const Matrix* random_targets = nullptr);

/// One-hot rows on the teacher's argmax (ties to the lowest id).
Matrix hard_targets(const ForwardTrace& teacher);

}  // namespace negdist::loss
