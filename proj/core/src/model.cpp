#include "negdist/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "negdist/error.hpp"

namespace negdist::model {

using detail::AttentionCache;
using detail::DecoderLayerCache;
using detail::EncoderLayerCache;
using detail::FeedForwardCache;
using detail::ForwardCache;
using detail::NormCache;
using detail::SequenceLayout;

namespace {

constexpr double kNormEpsilon = 1e-5;
constexpr TokenId kPad = 0;
constexpr TokenId kBos = 1;
constexpr TokenId kEos = 2;

template <class P, class F>
void visit_tensors(P& p, F&& f) {
  auto attention = [&](const std::string& prefix, auto& a) {
    f(prefix + ".wq", a.wq);
    f(prefix + ".wk", a.wk);
    f(prefix + ".wv", a.wv);
    f(prefix + ".wo", a.wo);
    f(prefix + ".bq", a.bq);
    f(prefix + ".bk", a.bk);
    f(prefix + ".bv", a.bv);
    f(prefix + ".bo", a.bo);
  };
  auto norm = [&](const std::string& prefix, auto& n) {
    f(prefix + ".gain", n.gain);
    f(prefix + ".bias", n.bias);
  };
  auto ffn = [&](const std::string& prefix, auto& w) {
    f(prefix + ".w1", w.w1);
    f(prefix + ".b1", w.b1);
    f(prefix + ".w2", w.w2);
    f(prefix + ".b2", w.b2);
  };
  f(std::string("embedding"), p.embedding);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const std::string base = "encoder." + std::to_string(l);
    attention(base + ".self_attention", p.encoder[l].self_attention);
    norm(base + ".norm1", p.encoder[l].norm1);
    ffn(base + ".ffn", p.encoder[l].ffn);
    norm(base + ".norm2", p.encoder[l].norm2);
  }
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const std::string base = "decoder." + std::to_string(l);
    attention(base + ".self_attention", p.decoder[l].self_attention);
    norm(base + ".norm1", p.decoder[l].norm1);
    attention(base + ".cross_attention", p.decoder[l].cross_attention);
    norm(base + ".norm2", p.decoder[l].norm2);
    ffn(base + ".ffn", p.decoder[l].ffn);
    norm(base + ".norm3", p.decoder[l].norm3);
  }
  f(std::string("output.weight"), p.output_weight);
  f(std::string("output.bias"), p.output_bias);
}

AttentionWeights zero_attention(std::size_t d) {
  return {Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d),
          Matrix::Zero(1, d), Matrix::Zero(1, d), Matrix::Zero(1, d), Matrix::Zero(1, d)};
}

LayerNormWeights zero_norm(std::size_t d) { return {Matrix::Zero(1, d), Matrix::Zero(1, d)}; }

FeedForwardWeights zero_ffn(std::size_t d, std::size_t ff) {
  return {Matrix::Zero(d, ff), Matrix::Zero(1, ff), Matrix::Zero(ff, d), Matrix::Zero(1, d)};
}

// Scale masks for inverted dropout, drawn in a fixed order from one stream.
class Dropout {
 public:
  Dropout(double rate, bool active, std::uint64_t seed)
      : rate_(rate), active_(active && rate > 0.0), rng_(seed) {}

  bool active() const noexcept { return active_; }

  Matrix mask(Eigen::Index rows, Eigen::Index cols) {
    if (!active_) return {};
    Matrix m(rows, cols);
    const double keep_scale = 1.0 / (1.0 - rate_);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform_(rng_) < rate_ ? 0.0 : keep_scale;
    return m;
  }

 private:
  double rate_;
  bool active_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

void apply_mask(Matrix& x, const Matrix& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

Matrix layer_norm(const Matrix& x, const LayerNormWeights& w, NormCache& cache) {
  const auto cols = static_cast<double>(x.cols());
  cache.normalized.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / cols;
    auto centered = (x.row(r).array() - mean).eval();
    const double var = centered.square().sum() / cols;
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    cache.inv_std(r) = inv;
    cache.normalized.row(r) = centered * inv;
  }
  Matrix y = cache.normalized.array().rowwise() * w.gain.row(0).array();
  y.rowwise() += w.bias.row(0);
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormWeights& w, const NormCache& cache,
                           LayerNormWeights& grad) {
  grad.gain += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  grad.bias += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * w.gain.row(0).array();
  const auto cols = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / cols;
    const double mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) / cols;
    dx.row(r) = cache.inv_std(r) *
                (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx);
  }
  return dx;
}

bool key_visible(const SequenceLayout& keys, std::size_t key_row, std::size_t i, std::size_t j, bool causal) {
  return keys.key_valid[key_row] != 0 && (!causal || j <= i);
}

Matrix masked_softmax(const Matrix& scores, const SequenceLayout& keys, std::size_t key_offset, bool causal) {
  Matrix p = Matrix::Zero(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    double max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < scores.cols(); ++j)
      if (key_visible(keys, key_offset + static_cast<std::size_t>(j), static_cast<std::size_t>(i),
                      static_cast<std::size_t>(j), causal))
        max = std::max(max, scores(i, j));
    if (!std::isfinite(max)) continue;
    double sum = 0.0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (!key_visible(keys, key_offset + static_cast<std::size_t>(j), static_cast<std::size_t>(i),
                       static_cast<std::size_t>(j), causal))
        continue;
      p(i, j) = std::exp(scores(i, j) - max);
      sum += p(i, j);
    }
    p.row(i) /= sum;
  }
  return p;
}

struct AttentionShape {
  std::size_t heads;
  std::size_t d_k;
  bool causal;
};

Matrix attention_forward(const AttentionWeights& w, const Matrix& xq, const Matrix& xkv,
                         const SequenceLayout& ql, const SequenceLayout& kl, const AttentionShape& shape,
                         Dropout& dropout, AttentionCache& cache,
                         std::vector<std::vector<Matrix>>* scores_out) {
  cache.q = linear(xq, w.wq, w.bq);
  cache.k = linear(xkv, w.wk, w.bk);
  cache.v = linear(xkv, w.wv, w.bv);
  cache.context = Matrix::Zero(xq.rows(), xq.cols());
  const std::size_t examples = ql.segments.size();
  cache.probs.assign(examples, std::vector<Matrix>(shape.heads));
  cache.dropout.assign(examples, std::vector<Matrix>(shape.heads));
  if (scores_out != nullptr) scores_out->assign(examples, std::vector<Matrix>(shape.heads));
  const auto dk = static_cast<Eigen::Index>(shape.d_k);

  for (std::size_t e = 0; e < examples; ++e) {
    const auto qo = static_cast<Eigen::Index>(ql.segments[e].offset);
    const auto tq = static_cast<Eigen::Index>(ql.segments[e].length);
    const auto ko = static_cast<Eigen::Index>(kl.segments[e].offset);
    const auto tk = static_cast<Eigen::Index>(kl.segments[e].length);
    for (std::size_t h = 0; h < shape.heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h) * dk;
      Matrix scores = attention_scores(cache.q.block(qo, col, tq, dk), cache.k.block(ko, col, tk, dk), shape.d_k);
      Matrix probs = masked_softmax(scores, kl, kl.segments[e].offset, shape.causal);
      Matrix mask = dropout.mask(tq, tk);
      if (mask.size() != 0) {
        cache.context.block(qo, col, tq, dk) = probs.cwiseProduct(mask) * cache.v.block(ko, col, tk, dk);
      } else {
        cache.context.block(qo, col, tq, dk) = probs * cache.v.block(ko, col, tk, dk);
      }
      cache.probs[e][h] = std::move(probs);
      cache.dropout[e][h] = std::move(mask);
      if (scores_out != nullptr) (*scores_out)[e][h] = std::move(scores);
    }
  }
  return linear(cache.context, w.wo, w.bo);
}

// Writes d/dxq and d/dxkv (not accumulated). `score_grads` may be null or
// hold empty matrices for examples/heads without an external gradient.
void attention_backward(const AttentionWeights& w, const AttentionCache& cache, const Matrix& xq,
                        const Matrix& xkv, const Matrix& dout, const SequenceLayout& ql,
                        const SequenceLayout& kl, const AttentionShape& shape,
                        const std::vector<std::vector<Matrix>>* score_grads, AttentionWeights& grad,
                        Matrix& dxq, Matrix& dxkv) {
  grad.wo.noalias() += cache.context.transpose() * dout;
  grad.bo += dout.colwise().sum();
  const Matrix dcontext = dout * w.wo.transpose();

  Matrix dq = Matrix::Zero(cache.q.rows(), cache.q.cols());
  Matrix dk_all = Matrix::Zero(cache.k.rows(), cache.k.cols());
  Matrix dv = Matrix::Zero(cache.v.rows(), cache.v.cols());
  const auto dk = static_cast<Eigen::Index>(shape.d_k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(shape.d_k));

  for (std::size_t e = 0; e < ql.segments.size(); ++e) {
    const auto qo = static_cast<Eigen::Index>(ql.segments[e].offset);
    const auto tq = static_cast<Eigen::Index>(ql.segments[e].length);
    const auto ko = static_cast<Eigen::Index>(kl.segments[e].offset);
    const auto tk = static_cast<Eigen::Index>(kl.segments[e].length);
    for (std::size_t h = 0; h < shape.heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h) * dk;
      const Matrix& probs = cache.probs[e][h];
      const Matrix& mask = cache.dropout[e][h];
      const auto dctx = dcontext.block(qo, col, tq, dk);
      const auto vh = cache.v.block(ko, col, tk, dk);
      Matrix dprobs = dctx * vh.transpose();
      if (mask.size() != 0) {
        dv.block(ko, col, tk, dk).noalias() += probs.cwiseProduct(mask).transpose() * dctx;
        dprobs.array() *= mask.array();
      } else {
        dv.block(ko, col, tk, dk).noalias() += probs.transpose() * dctx;
      }
      const Eigen::VectorXd row_dot = (dprobs.array() * probs.array()).rowwise().sum();
      Matrix dscores = probs.array() * (dprobs.colwise() - row_dot).array();
      if (score_grads != nullptr && e < score_grads->size() && h < (*score_grads)[e].size() &&
          (*score_grads)[e][h].size() != 0)
        dscores += (*score_grads)[e][h];
      dq.block(qo, col, tq, dk).noalias() += scale * (dscores * cache.k.block(ko, col, tk, dk));
      dk_all.block(ko, col, tk, dk).noalias() += scale * (dscores.transpose() * cache.q.block(qo, col, tq, dk));
    }
  }

  grad.wq.noalias() += xq.transpose() * dq;
  grad.bq += dq.colwise().sum();
  grad.wk.noalias() += xkv.transpose() * dk_all;
  grad.bk += dk_all.colwise().sum();
  grad.wv.noalias() += xkv.transpose() * dv;
  grad.bv += dv.colwise().sum();
  dxq = dq * w.wq.transpose();
  dxkv = dk_all * w.wk.transpose();
  dxkv.noalias() += dv * w.wv.transpose();
}

Matrix ffn_forward(const FeedForwardWeights& w, const Matrix& x, Dropout& dropout, FeedForwardCache& cache) {
  cache.pre_activation = linear(x, w.w1, w.b1);
  cache.activation = cache.pre_activation.cwiseMax(0.0);
  cache.dropout = dropout.mask(cache.activation.rows(), cache.activation.cols());
  apply_mask(cache.activation, cache.dropout);
  return linear(cache.activation, w.w2, w.b2);
}

Matrix ffn_backward(const FeedForwardWeights& w, const FeedForwardCache& cache, const Matrix& x,
                    const Matrix& dout, FeedForwardWeights& grad) {
  grad.w2.noalias() += cache.activation.transpose() * dout;
  grad.b2 += dout.colwise().sum();
  Matrix dact = dout * w.w2.transpose();
  apply_mask(dact, cache.dropout);
  dact = (cache.pre_activation.array() > 0.0).select(dact, 0.0);
  grad.w1.noalias() += x.transpose() * dact;
  grad.b1 += dact.colwise().sum();
  return dact * w.w1.transpose();
}

Matrix positional_encoding(const SequenceLayout& layout, std::size_t d_model) {
  Matrix pe(static_cast<Eigen::Index>(layout.tokens.size()), static_cast<Eigen::Index>(d_model));
  for (std::size_t r = 0; r < layout.tokens.size(); ++r) {
    const auto pos = static_cast<double>(layout.position[r]);
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = std::sin(angle);
      if (i + 1 < d_model) pe(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i + 1)) = std::cos(angle);
    }
  }
  return pe;
}

Matrix embed(const Parameters& params, const SequenceLayout& layout, Dropout& dropout, Matrix& mask) {
  const double scale = std::sqrt(static_cast<double>(params.config.d_model));
  Matrix x = positional_encoding(layout, params.config.d_model);
  for (std::size_t r = 0; r < layout.tokens.size(); ++r)
    x.row(static_cast<Eigen::Index>(r)) += scale * params.embedding.row(layout.tokens[r]);
  mask = dropout.mask(x.rows(), x.cols());
  apply_mask(x, mask);
  return x;
}

void embed_backward(const Parameters& params, const SequenceLayout& layout, const Matrix& mask, Matrix dx,
                    Parameters& grads) {
  apply_mask(dx, mask);
  const double scale = std::sqrt(static_cast<double>(params.config.d_model));
  for (std::size_t r = 0; r < layout.tokens.size(); ++r)
    grads.embedding.row(layout.tokens[r]) += scale * dx.row(static_cast<Eigen::Index>(r));
}

void check_tokens(std::span<const TokenId> ids, std::size_t vocab, const char* what) {
  for (TokenId id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw Error(ErrorKind::Domain, std::string(what) + " token id " + std::to_string(id) +
                                         " outside vocab of size " + std::to_string(vocab));
}

SequenceLayout source_layout(std::span<const Example> batch, const ModelConfig& config) {
  SequenceLayout layout;
  for (const auto& ex : batch) {
    if (ex.query.empty()) throw Error(ErrorKind::EmptyInput, "empty query");
    if (ex.query.size() > config.max_sequence_length)
      throw Error(ErrorKind::Truncation, "query of length " + std::to_string(ex.query.size()) +
                                             " exceeds max_sequence_length " +
                                             std::to_string(config.max_sequence_length));
    check_tokens(ex.query, config.vocab_size, "query");
    layout.segments.push_back({layout.tokens.size(), ex.query.size()});
    bool any = false;
    for (std::size_t i = 0; i < ex.query.size(); ++i) {
      layout.tokens.push_back(ex.query[i]);
      layout.key_valid.push_back(ex.query[i] != kPad ? 1 : 0);
      layout.position.push_back(i);
      any = any || ex.query[i] != kPad;
    }
    if (!any) throw Error(ErrorKind::EmptyInput, "query consists only of padding");
  }
  return layout;
}

// Decoder input is [BOS] + response; targets are response + [EOS] with
// everything after the first PAD masked.
SequenceLayout target_layout(std::span<const Example> batch, const ModelConfig& config,
                             std::vector<TokenId>* targets, std::vector<std::uint8_t>* valid) {
  SequenceLayout layout;
  for (const auto& ex : batch) {
    const std::size_t n = ex.response.size();
    if (n + 1 > config.max_sequence_length)
      throw Error(ErrorKind::Truncation, "response of length " + std::to_string(n) +
                                             " plus BOS exceeds max_sequence_length " +
                                             std::to_string(config.max_sequence_length));
    check_tokens(ex.response, config.vocab_size, "response");
    const std::size_t m = static_cast<std::size_t>(
        std::find(ex.response.begin(), ex.response.end(), kPad) - ex.response.begin());
    layout.segments.push_back({layout.tokens.size(), n + 1});
    for (std::size_t i = 0; i <= n; ++i) {
      layout.tokens.push_back(i == 0 ? kBos : ex.response[i - 1]);
      layout.key_valid.push_back(i <= m ? 1 : 0);
      layout.position.push_back(i);
      if (targets != nullptr) targets->push_back(i < m ? ex.response[i] : (i == m ? kEos : kPad));
      if (valid != nullptr) valid->push_back(i <= m ? 1 : 0);
    }
  }
  return layout;
}

AttentionShape self_shape(const ModelConfig& c, bool causal) { return {c.num_heads, c.d_k, causal}; }

Matrix run_encoder(const Parameters& params, const SequenceLayout& src, Dropout& dropout, ForwardCache& cache) {
  const auto& cfg = params.config;
  Matrix x = embed(params, src, dropout, cache.source_dropout);
  cache.encoder.resize(params.encoder.size());
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const auto& w = params.encoder[l];
    auto& c = cache.encoder[l];
    c.input = std::move(x);
    Matrix a = attention_forward(w.self_attention, c.input, c.input, src, src, self_shape(cfg, false), dropout,
                                 c.attention, nullptr);
    c.attention_dropout = dropout.mask(a.rows(), a.cols());
    apply_mask(a, c.attention_dropout);
    c.hidden1 = layer_norm(c.input + a, w.norm1, c.norm1);
    Matrix f = ffn_forward(w.ffn, c.hidden1, dropout, c.ffn);
    c.ffn_dropout = dropout.mask(f.rows(), f.cols());
    apply_mask(f, c.ffn_dropout);
    x = layer_norm(c.hidden1 + f, w.norm2, c.norm2);
  }
  return x;
}

Matrix run_decoder(const Parameters& params, const SequenceLayout& tgt, const SequenceLayout& src,
                   const Matrix& memory, Dropout& dropout, ForwardCache& cache, ForwardTrace* trace,
                   bool expose_cross) {
  const auto& cfg = params.config;
  Matrix x = embed(params, tgt, dropout, cache.target_dropout);
  cache.decoder.resize(params.decoder.size());
  if (trace != nullptr) {
    trace->decoder_hidden.resize(params.decoder.size());
    trace->decoder_self_attention_scores.resize(params.decoder.size());
    if (expose_cross) trace->cross_attention_scores.resize(params.decoder.size());
  }
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const auto& w = params.decoder[l];
    auto& c = cache.decoder[l];
    c.input = std::move(x);
    Matrix a = attention_forward(w.self_attention, c.input, c.input, tgt, tgt, self_shape(cfg, true), dropout,
                                 c.self_attention,
                                 trace != nullptr ? &trace->decoder_self_attention_scores[l] : nullptr);
    c.self_dropout = dropout.mask(a.rows(), a.cols());
    apply_mask(a, c.self_dropout);
    c.hidden1 = layer_norm(c.input + a, w.norm1, c.norm1);
    Matrix ca = attention_forward(w.cross_attention, c.hidden1, memory, tgt, src, self_shape(cfg, false), dropout,
                                  c.cross_attention,
                                  trace != nullptr && expose_cross ? &trace->cross_attention_scores[l] : nullptr);
    c.cross_dropout = dropout.mask(ca.rows(), ca.cols());
    apply_mask(ca, c.cross_dropout);
    c.hidden2 = layer_norm(c.hidden1 + ca, w.norm2, c.norm2);
    Matrix f = ffn_forward(w.ffn, c.hidden2, dropout, c.ffn);
    c.ffn_dropout = dropout.mask(f.rows(), f.cols());
    apply_mask(f, c.ffn_dropout);
    x = layer_norm(c.hidden2 + f, w.norm3, c.norm3);
    if (trace != nullptr) trace->decoder_hidden[l] = x;
  }
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::Config, "model config: " + why); };
  if (num_encoder_layers == 0 || num_decoder_layers == 0) fail("layer counts must be positive");
  if (num_heads == 0 || d_k == 0 || d_model == 0 || d_ff == 0) fail("widths must be positive");
  if (d_model != num_heads * d_k)
    fail("d_model (" + std::to_string(d_model) + ") must equal num_heads * d_k (" +
         std::to_string(num_heads) + " * " + std::to_string(d_k) + ")");
  if (vocab_size <= 4) fail("vocab_size must exceed the 4 reserved tokens");
  if (max_sequence_length < 2) fail("max_sequence_length must be at least 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
}

Parameters::Parameters(const ModelConfig& cfg) : config(cfg) {
  config.validate();
  const auto d = config.d_model;
  embedding = Matrix::Zero(static_cast<Eigen::Index>(config.vocab_size), static_cast<Eigen::Index>(d));
  for (std::size_t l = 0; l < config.num_encoder_layers; ++l)
    encoder.push_back({zero_attention(d), zero_norm(d), zero_ffn(d, config.d_ff), zero_norm(d)});
  for (std::size_t l = 0; l < config.num_decoder_layers; ++l)
    decoder.push_back({zero_attention(d), zero_norm(d), zero_attention(d), zero_norm(d), zero_ffn(d, config.d_ff),
                       zero_norm(d)});
  output_weight = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(config.vocab_size));
  output_bias = Matrix::Zero(1, static_cast<Eigen::Index>(config.vocab_size));
}

std::vector<Matrix*> Parameters::tensors() {
  std::vector<Matrix*> out;
  visit_tensors(*this, [&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> Parameters::tensors() const {
  std::vector<const Matrix*> out;
  visit_tensors(*this, [&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<std::string> Parameters::names() const {
  std::vector<std::string> out;
  visit_tensors(*this, [&](const std::string& name, const Matrix&) { out.push_back(name); });
  return out;
}

std::size_t Parameters::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

void Parameters::set_zero() {
  for (Matrix* m : tensors()) m->setZero();
}

bool Parameters::all_finite() const {
  for (const Matrix* m : tensors())
    if (!m->allFinite()) return false;
  return true;
}

bool Parameters::identical_to(const Parameters& other) const {
  if (!(config == other.config)) return false;
  const auto a = tensors();
  const auto b = other.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) return false;
    if (std::memcmp(a[i]->data(), b[i]->data(), sizeof(double) * static_cast<std::size_t>(a[i]->size())) != 0)
      return false;
  }
  return true;
}

Parameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
  Parameters params(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto names = params.names();
  const auto tensors = params.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Matrix& m = *tensors[t];
    const std::string& name = names[t];
    if (m.rows() == 1) {
      const bool gain = name.size() >= 4 && name.compare(name.size() - 4, 4, "gain") == 0;
      m.setConstant(gain ? 1.0 : 0.0);
      continue;
    }
    const double fan_in = name == "embedding" ? static_cast<double>(config.d_model) : static_cast<double>(m.rows());
    const double stddev = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = static_cast<double>(static_cast<float>(stddev * normal(rng)));
  }
  return params;
}

Matrix attention_scores(const Matrix& queries, const Matrix& keys, std::size_t d_k) {
  if (queries.cols() != keys.cols())
    throw Error(ErrorKind::Shape, "attention_scores: query width " + std::to_string(queries.cols()) +
                                      " != key width " + std::to_string(keys.cols()));
  if (d_k == 0) throw Error(ErrorKind::Config, "attention_scores: d_k must be positive");
  Matrix scores = queries * keys.transpose();
  scores /= std::sqrt(static_cast<double>(d_k));
  return scores;
}

RowVector softmax_with_temperature(const RowVector& logits, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::Config, "softmax temperature must be positive");
  const double max = logits.maxCoeff();
  RowVector p = ((logits.array() - max) / temperature).exp().matrix();
  p /= p.sum();
  return p;
}

Matrix softmax_rows(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::Config, "softmax temperature must be positive");
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double max = logits.row(r).maxCoeff();
    p.row(r) = ((logits.row(r).array() - max) / temperature).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

std::size_t ForwardTrace::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

void TraceGradient::add_scaled(const TraceGradient& other, double scale) {
  auto add = [scale](Matrix& into, const Matrix& from) {
    if (from.size() == 0) return;
    if (into.size() == 0) {
      into = scale * from;
    } else {
      into += scale * from;
    }
  };
  add(logits, other.logits);
  if (decoder_hidden.size() < other.decoder_hidden.size()) decoder_hidden.resize(other.decoder_hidden.size());
  for (std::size_t l = 0; l < other.decoder_hidden.size(); ++l) add(decoder_hidden[l], other.decoder_hidden[l]);
  auto& mine = decoder_self_attention_scores;
  const auto& theirs = other.decoder_self_attention_scores;
  if (mine.size() < theirs.size()) mine.resize(theirs.size());
  for (std::size_t l = 0; l < theirs.size(); ++l) {
    if (mine[l].size() < theirs[l].size()) mine[l].resize(theirs[l].size());
    for (std::size_t e = 0; e < theirs[l].size(); ++e) {
      if (mine[l][e].size() < theirs[l][e].size()) mine[l][e].resize(theirs[l][e].size());
      for (std::size_t h = 0; h < theirs[l][e].size(); ++h) add(mine[l][e][h], theirs[l][e][h]);
    }
  }
}

ForwardPass forward(const Parameters& params, std::span<const Example> batch, Mode mode,
                    const ForwardOptions& options) {
  if (batch.empty()) throw Error(ErrorKind::Data, "forward: empty batch");
  ForwardPass pass;
  auto& cache = pass.cache;
  auto& trace = pass.trace;
  cache.source = source_layout(batch, params.config);
  cache.target = target_layout(batch, params.config, &trace.targets, &trace.valid);
  trace.segments = cache.target.segments;

  Dropout dropout(params.config.dropout_rate, mode == Mode::Train, options.dropout_seed);
  cache.memory = run_encoder(params, cache.source, dropout, cache);
  cache.final_hidden = run_decoder(params, cache.target, cache.source, cache.memory, dropout, cache, &trace,
                                   options.expose_cross_attention);
  trace.logits = linear(cache.final_hidden, params.output_weight, params.output_bias);
  return pass;
}

ForwardPass forward(const Parameters& params, std::span<const TokenId> query, std::span<const TokenId> response,
                    Mode mode, const ForwardOptions& options) {
  const Example ex{query, response};
  return forward(params, std::span<const Example>(&ex, 1), mode, options);
}

void backward(const Parameters& params, const ForwardPass& pass, const TraceGradient& upstream, Parameters& grads) {
  const auto& cfg = params.config;
  const auto& cache = pass.cache;
  if (!(grads.config == cfg)) throw Error(ErrorKind::Architecture, "backward: gradient buffer has another config");
  const auto rows = static_cast<Eigen::Index>(cache.target.tokens.size());
  const auto d = static_cast<Eigen::Index>(cfg.d_model);

  Matrix dx = Matrix::Zero(rows, d);
  if (upstream.logits.size() != 0) {
    if (upstream.logits.rows() != rows || upstream.logits.cols() != pass.trace.logits.cols())
      throw Error(ErrorKind::Shape, "backward: logits gradient shape mismatch");
    grads.output_weight.noalias() += cache.final_hidden.transpose() * upstream.logits;
    grads.output_bias += upstream.logits.colwise().sum();
    dx.noalias() = upstream.logits * params.output_weight.transpose();
  }

  Matrix dmemory = Matrix::Zero(cache.memory.rows(), cache.memory.cols());
  const auto self = self_shape(cfg, true);
  const auto cross = self_shape(cfg, false);
  for (std::size_t li = params.decoder.size(); li-- > 0;) {
    if (li < upstream.decoder_hidden.size() && upstream.decoder_hidden[li].size() != 0) {
      if (upstream.decoder_hidden[li].rows() != rows || upstream.decoder_hidden[li].cols() != d)
        throw Error(ErrorKind::Shape, "backward: hidden-state gradient shape mismatch");
      dx += upstream.decoder_hidden[li];
    }
    const auto& w = params.decoder[li];
    const auto& c = cache.decoder[li];
    auto& g = grads.decoder[li];

    Matrix dz = layer_norm_backward(dx, w.norm3, c.norm3, g.norm3);
    Matrix df = dz;
    apply_mask(df, c.ffn_dropout);
    Matrix dh2 = dz + ffn_backward(w.ffn, c.ffn, c.hidden2, df, g.ffn);

    dz = layer_norm_backward(dh2, w.norm2, c.norm2, g.norm2);
    Matrix dca = dz;
    apply_mask(dca, c.cross_dropout);
    Matrix dq_in, dmem;
    attention_backward(w.cross_attention, c.cross_attention, c.hidden1, cache.memory, dca, cache.target,
                       cache.source, cross, nullptr, g.cross_attention, dq_in, dmem);
    dmemory += dmem;
    Matrix dh1 = dz + dq_in;

    dz = layer_norm_backward(dh1, w.norm1, c.norm1, g.norm1);
    Matrix da = dz;
    apply_mask(da, c.self_dropout);
    const std::vector<std::vector<Matrix>>* score_grads =
        li < upstream.decoder_self_attention_scores.size() ? &upstream.decoder_self_attention_scores[li] : nullptr;
    Matrix dxq, dxkv;
    attention_backward(w.self_attention, c.self_attention, c.input, c.input, da, cache.target, cache.target, self,
                       score_grads, g.self_attention, dxq, dxkv);
    dx = dz + dxq + dxkv;
  }
  embed_backward(params, cache.target, cache.target_dropout, std::move(dx), grads);

  Matrix dm = std::move(dmemory);
  const auto enc_shape = self_shape(cfg, false);
  for (std::size_t li = params.encoder.size(); li-- > 0;) {
    const auto& w = params.encoder[li];
    const auto& c = cache.encoder[li];
    auto& g = grads.encoder[li];
    Matrix dz = layer_norm_backward(dm, w.norm2, c.norm2, g.norm2);
    Matrix df = dz;
    apply_mask(df, c.ffn_dropout);
    Matrix dh1 = dz + ffn_backward(w.ffn, c.ffn, c.hidden1, df, g.ffn);
    dz = layer_norm_backward(dh1, w.norm1, c.norm1, g.norm1);
    Matrix da = dz;
    apply_mask(da, c.attention_dropout);
    Matrix dxq, dxkv;
    attention_backward(w.self_attention, c.attention, c.input, c.input, da, cache.source, cache.source, enc_shape,
                       nullptr, g.self_attention, dxq, dxkv);
    dm = dz + dxq + dxkv;
  }
  embed_backward(params, cache.source, cache.source_dropout, std::move(dm), grads);
}

// ---------------------------------------------------------------------------

EncodedQuery::EncodedQuery(const Parameters& params, std::span<const TokenId> query) : params_(&params) {
  const Example ex{query, {}};
  source_ = source_layout(std::span<const Example>(&ex, 1), params.config);
  Dropout off(0.0, false, 0);
  ForwardCache scratch;
  memory_ = run_encoder(params, source_, off, scratch);
}

RowVector EncodedQuery::next_logits(std::span<const TokenId> prefix) const {
  const Example ex{{}, prefix};
  const SequenceLayout target = target_layout(std::span<const Example>(&ex, 1), params_->config, nullptr, nullptr);
  Dropout off(0.0, false, 0);
  ForwardCache scratch;
  const Matrix hidden = run_decoder(*params_, target, source_, memory_, off, scratch, nullptr, false);
  RowVector logits = hidden.row(hidden.rows() - 1) * params_->output_weight;
  logits += params_->output_bias.row(0);
  return logits;
}

}  // namespace negdist::model
