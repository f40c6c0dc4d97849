#include <gtest/gtest.h>

#include <sstream>

#include "negdist/error.hpp"
#include "negdist/run_config.hpp"

namespace negdist {
namespace {

RunConfig parse(const std::string& text, const std::filesystem::path& base = {}) {
  std::istringstream in(text);
  return parse_run_config(in, base);
}

ErrorKind kind_of(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error for: " << text;
  return ErrorKind::Numeric;
}

TEST(RunConfig, DefaultsAreDeskScale) {
  const auto c = parse("");
  EXPECT_EQ(c.model.num_encoder_layers, 2u);
  EXPECT_EQ(c.model.num_decoder_layers, 2u);
  EXPECT_EQ(c.model.d_model, 64u);
  EXPECT_EQ(c.model.d_k * c.model.num_heads, c.model.d_model);
  EXPECT_EQ(c.optim.d_model, c.model.d_model);
  EXPECT_EQ(c.schedule.gamma, 2.0 * static_cast<double>(c.optim.warmup_steps));
  EXPECT_DOUBLE_EQ(c.schedule.beta, 6.0 / c.schedule.gamma);
  EXPECT_EQ(c.schedule.lambda, 4.0);
  EXPECT_EQ(c.filter_ratio, 0.5);
  EXPECT_EQ(c.distill.target, loss::NegativeTarget::Soft);
}

TEST(RunConfig, ParsesKeysCommentsAndDerivedValues) {
  const auto c = parse(
      "# comment\n"
      "d_model = 32\n"
      "num_heads = 4\n"
      "warmup_steps = 50   \n"
      "\n"
      "negative_target = hard\n"
      "fixed_alpha = 0.25\n"
      "include_attention = false\n"
      "train_data = data/train.tsv\n",
      "/base");
  EXPECT_EQ(c.model.d_model, 32u);
  EXPECT_EQ(c.model.d_k, 8u);
  EXPECT_EQ(c.optim.d_model, 32u);
  EXPECT_EQ(c.schedule.gamma, 100.0);
  EXPECT_DOUBLE_EQ(c.schedule.beta, 0.06);
  EXPECT_EQ(c.distill.target, loss::NegativeTarget::Hard);
  ASSERT_TRUE(c.schedule.fixed_alpha.has_value());
  EXPECT_EQ(*c.schedule.fixed_alpha, 0.25);
  EXPECT_FALSE(c.distill.include_attention);
  EXPECT_EQ(c.train_data, std::filesystem::path("/base/data/train.tsv"));
}

TEST(RunConfig, ExplicitGammaAndBetaWin) {
  const auto c = parse("warmup_steps = 50\ngamma = 300\nbeta = 0.5\n");
  EXPECT_EQ(c.schedule.gamma, 300.0);
  EXPECT_EQ(c.schedule.beta, 0.5);
}

TEST(RunConfig, Errors) {
  EXPECT_EQ(kind_of("no_such_key = 1\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("seed = 1\nseed = 2\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("seed\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("d_model = abc\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("d_model = 30\nnum_heads = 4\n"), ErrorKind::Architecture);
  EXPECT_EQ(kind_of("filter_ratio = 1\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("temperature = 0\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("lambda = 5\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("negative_target = sideways\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("label_smoothing = 0.5\n"), ErrorKind::Config);
}

TEST(RunConfig, EntriesRoundTrip) {
  const auto c = parse("d_model = 32\nnum_heads = 2\nfixed_alpha = 0.5\nnegative_target = random\nseed = 9\n");
  std::ostringstream text;
  // Unset paths and the corpus-derived vocab_size are not settable keys.
  for (const auto& [k, v] : c.entries())
    if (!v.empty() && k != "vocab_size") text << k << " = " << v << '\n';
  const auto d = parse(text.str());
  EXPECT_EQ(d.entries(), c.entries());
  EXPECT_EQ(d.model, c.model);
  EXPECT_EQ(d.optim.seed, 9u);
  EXPECT_EQ(d.distill.target, loss::NegativeTarget::Random);
}

TEST(RunConfig, EveryKeyIsDocumented) {
  const auto c = parse("");
  std::vector<std::string> entry_keys;
  for (const auto& [k, v] : c.entries()) entry_keys.push_back(k);
  ASSERT_EQ(entry_keys.back(), "vocab_size");
  entry_keys.pop_back();
  EXPECT_EQ(entry_keys, RunConfig::keys());
}

TEST(NegativeTarget, Names) {
  for (const auto t : {loss::NegativeTarget::Soft, loss::NegativeTarget::Hard, loss::NegativeTarget::Random})
    EXPECT_EQ(parse_negative_target(to_string(t)), t);
}

}  // namespace
}  // namespace negdist
