#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "negdist/decoding.hpp"
#include "negdist/losses.hpp"
#include "negdist/metrics.hpp"
#include "negdist/model.hpp"

namespace {

using namespace negdist;

model::ModelConfig config_of(std::size_t d_model, std::size_t vocab) {
  model::ModelConfig c;
  c.vocab_size = vocab;
  c.num_encoder_layers = 2;
  c.num_decoder_layers = 2;
  c.num_heads = 4;
  c.d_model = d_model;
  c.d_k = d_model / 4;
  c.d_ff = 2 * d_model;
  c.max_sequence_length = 64;
  c.dropout_rate = 0.1;
  return c;
}

struct Batch {
  std::vector<TokenSequence> queries, responses;
  std::vector<model::Example> examples;
};

Batch make_batch(std::size_t count, std::size_t length, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> tok(4, static_cast<TokenId>(vocab - 1));
  Batch b;
  for (std::size_t i = 0; i < count; ++i) {
    TokenSequence q(length), r(length);
    for (auto& t : q) t = tok(rng);
    for (auto& t : r) t = tok(rng);
    b.queries.push_back(std::move(q));
    b.responses.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < count; ++i) b.examples.push_back({b.queries[i], b.responses[i]});
  return b;
}

void BM_Forward(benchmark::State& state) {
  const auto cfg = config_of(static_cast<std::size_t>(state.range(0)), 500);
  const auto params = model::init_parameters(cfg, 1);
  const auto batch = make_batch(32, 8, cfg.vocab_size, 2);
  for (auto _ : state) benchmark::DoNotOptimize(model::forward(params, batch.examples, model::Mode::Eval));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ForwardBackwardNd(benchmark::State& state) {
  const auto cfg = config_of(static_cast<std::size_t>(state.range(0)), 500);
  const auto student = model::init_parameters(cfg, 1);
  const auto teacher = model::init_parameters(cfg, 2);
  const auto batch = make_batch(32, 8, cfg.vocab_size, 3);
  loss::DistillConfig dc;
  for (auto _ : state) {
    const auto t = model::forward(teacher, batch.examples, model::Mode::Eval);
    const auto s = model::forward(student, batch.examples, model::Mode::Train);
    const auto l = loss::combined_loss(s.trace, t.trace, 0.5, dc);
    auto grads = student.zeros_like();
    model::backward(student, s, l.grad, grads);
    benchmark::DoNotOptimize(grads);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ForwardBackwardNd)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_BeamDecode(benchmark::State& state) {
  const auto cfg = config_of(64, 500);
  const auto params = model::init_parameters(cfg, 1);
  const TokenSequence query{10, 11, 12, 13, 14};
  decode::DecodeConfig dc;
  dc.strategy = decode::Strategy::Beam;
  dc.beam_size = static_cast<std::size_t>(state.range(0));
  dc.max_length = 16;
  for (auto _ : state) benchmark::DoNotOptimize(decode::decode(params, query, dc));
}
BENCHMARK(BM_BeamDecode)->Arg(1)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

metrics::Corpus random_corpus(std::size_t sentences, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> word(0, 2000), len(3, 15);
  metrics::Corpus c(sentences);
  for (auto& s : c) {
    s.resize(static_cast<std::size_t>(len(rng)));
    for (auto& w : s) w = "w" + std::to_string(word(rng));
  }
  return c;
}

void BM_Metrics(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto gen = random_corpus(n, 1);
  const auto ref = random_corpus(n, 2);
  corpus::Vocab vocab;
  for (int w = 0; w <= 2000; ++w) vocab.add("w" + std::to_string(w), static_cast<std::uint64_t>(w));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::evaluate(gen, ref, vocab));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Metrics)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
