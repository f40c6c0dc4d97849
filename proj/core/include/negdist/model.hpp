#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "negdist/types.hpp"

namespace negdist::model {

struct ModelConfig {
  std::size_t num_encoder_layers = 2;
  std::size_t num_decoder_layers = 2;
  std::size_t num_heads = 2;
  std::size_t d_model = 16;
  std::size_t d_ff = 32;
  std::size_t d_k = 8;
  std::size_t vocab_size = 0;
  std::size_t max_sequence_length = 64;
  double dropout_rate = 0.1;

  /// Throws Config unless d_model == num_heads * d_k, dropout in [0, 1), and
  /// every count is positive.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct AttentionWeights {
  Matrix wq, wk, wv, wo;  // d_model x d_model
  Matrix bq, bk, bv, bo;  // 1 x d_model
};

struct LayerNormWeights {
  Matrix gain, bias;  // 1 x d_model
};

struct FeedForwardWeights {
  Matrix w1, b1;  // d_model x d_ff, 1 x d_ff
  Matrix w2, b2;  // d_ff x d_model, 1 x d_model
};

struct EncoderLayerWeights {
  AttentionWeights self_attention;
  LayerNormWeights norm1;
  FeedForwardWeights ffn;
  LayerNormWeights norm2;
};

struct DecoderLayerWeights {
  AttentionWeights self_attention;
  LayerNormWeights norm1;
  AttentionWeights cross_attention;
  LayerNormWeights norm2;
  FeedForwardWeights ffn;
  LayerNormWeights norm3;
};

/// All trainable tensors of the encoder-decoder. The token embedding is shared
/// by encoder and decoder inputs; the output projection is untied.
struct Parameters {
  ModelConfig config;
  Matrix embedding;  // vocab x d_model
  std::vector<EncoderLayerWeights> encoder;
  std::vector<DecoderLayerWeights> decoder;
  Matrix output_weight;  // d_model x vocab
  Matrix output_bias;    // 1 x vocab

  /// Zero-filled tensors shaped for `config` (validated).
  explicit Parameters(const ModelConfig& config);

  /// Tensors in canonical order; names() matches index for index.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::vector<std::string> names() const;

  std::size_t parameter_count() const;
  Parameters zeros_like() const { return Parameters(config); }
  void set_zero();
  bool all_finite() const;

  /// Bitwise equality of config and every tensor.
  bool identical_to(const Parameters& other) const;
};

/// Deterministic in (config, seed). Weights are centered normals with
/// variance 1/fan_in, rounded to float32; layer-norm gains 1, biases 0.
Parameters init_parameters(const ModelConfig& config, std::uint64_t seed);

/// A = Q K^T / sqrt(d_k), unmasked. Shape error when inner widths differ.
Matrix attention_scores(const Matrix& queries, const Matrix& keys, std::size_t d_k);

/// exp(z_i / t) / sum_j exp(z_j / t), max-subtracted. Config error for t <= 0.
RowVector softmax_with_temperature(const RowVector& logits, double temperature);

/// Row-wise softmax_with_temperature.
Matrix softmax_rows(const Matrix& logits, double temperature);

enum class Mode { Train, Eval };

struct ForwardOptions {
  /// Seeds the dropout masks in Train mode.
  std::uint64_t dropout_seed = 0;
  /// Also record encoder-decoder attention scores in the trace.
  bool expose_cross_attention = false;
};

/// One (query, response) example. PAD tokens are masked; a response is cut at
/// its first PAD. The decoder reads [BOS] + response and predicts
/// response + [EOS].
struct Example {
  std::span<const TokenId> query;
  std::span<const TokenId> response;
};

struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Teacher-forced outputs for a batch of examples, stacked by target position.
struct ForwardTrace {
  Matrix logits;                      // rows x vocab
  std::vector<TokenId> targets;       // per row
  std::vector<std::uint8_t> valid;    // per row; 0 marks padding
  std::vector<Segment> segments;      // target rows of each example
  std::vector<Matrix> decoder_hidden;  // [layer] rows x d_model, post layer norm
  /// [layer][example][head] raw pre-softmax self-attention scores, T x T.
  /// Causal and padding masks are NOT applied to the stored values.
  std::vector<std::vector<std::vector<Matrix>>> decoder_self_attention_scores;
  /// Same layout over encoder keys; empty unless requested.
  std::vector<std::vector<std::vector<Matrix>>> cross_attention_scores;

  std::size_t example_count() const noexcept { return segments.size(); }
  std::size_t valid_count() const;
  /// Self-attention entry (i, j) of example e is valid iff j <= i and both
  /// positions are unpadded.
  bool self_attention_valid(std::size_t example, std::size_t i, std::size_t j) const {
    const auto off = segments[example].offset;
    return j <= i && valid[off + i] != 0 && valid[off + j] != 0;
  }
};

/// Upstream gradient with respect to trace outputs. Empty members mean zero.
struct TraceGradient {
  Matrix logits;
  std::vector<Matrix> decoder_hidden;
  std::vector<std::vector<std::vector<Matrix>>> decoder_self_attention_scores;

  /// this += scale * other
  void add_scaled(const TraceGradient& other, double scale);
};

namespace detail {

struct SequenceLayout {
  std::vector<Segment> segments;
  std::vector<TokenId> tokens;            // per row, as fed to the embedding
  std::vector<std::uint8_t> key_valid;    // per row
  std::vector<std::size_t> position;      // per row, restarts per segment
};

struct AttentionCache {
  Matrix q, k, v;
  Matrix context;
  std::vector<std::vector<Matrix>> probs;    // [example][head], masked softmax
  std::vector<std::vector<Matrix>> dropout;  // [example][head] scale masks
};

struct NormCache {
  Matrix normalized;
  Eigen::VectorXd inv_std;
};

struct FeedForwardCache {
  Matrix pre_activation;
  Matrix activation;  // after ReLU and dropout
  Matrix dropout;
};

struct EncoderLayerCache {
  Matrix input;
  AttentionCache attention;
  Matrix attention_dropout;
  NormCache norm1;
  Matrix hidden1;
  FeedForwardCache ffn;
  Matrix ffn_dropout;
  NormCache norm2;
};

struct DecoderLayerCache {
  Matrix input;
  AttentionCache self_attention;
  Matrix self_dropout;
  NormCache norm1;
  Matrix hidden1;
  AttentionCache cross_attention;
  Matrix cross_dropout;
  NormCache norm2;
  Matrix hidden2;
  FeedForwardCache ffn;
  Matrix ffn_dropout;
  NormCache norm3;
};

struct ForwardCache {
  SequenceLayout source;
  SequenceLayout target;
  Matrix source_dropout;
  Matrix target_dropout;
  std::vector<EncoderLayerCache> encoder;
  Matrix memory;
  std::vector<DecoderLayerCache> decoder;
  Matrix final_hidden;
};

}  // namespace detail

/// Trace plus the activations needed to back-propagate through it.
struct ForwardPass {
  ForwardTrace trace;
  detail::ForwardCache cache;
};

/// Teacher-forced forward pass. Truncation error if a query exceeds
/// max_sequence_length or a response leaves no room for BOS/EOS.
ForwardPass forward(const Parameters& params, std::span<const Example> batch, Mode mode,
                    const ForwardOptions& options = {});

ForwardPass forward(const Parameters& params, std::span<const TokenId> query,
                    std::span<const TokenId> response, Mode mode, const ForwardOptions& options = {});

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(trace).
void backward(const Parameters& params, const ForwardPass& pass, const TraceGradient& upstream,
              Parameters& grads);

/// Encoder output for one query, reusable across decoding steps.
class EncodedQuery {
 public:
  EncodedQuery(const Parameters& params, std::span<const TokenId> query);

  /// Eval-mode logits for the token following [BOS] + prefix.
  RowVector next_logits(std::span<const TokenId> prefix) const;

 private:
  const Parameters* params_;
  detail::SequenceLayout source_;
  Matrix memory_;
};

}  // namespace negdist::model
