#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "negdist/checkpoint.hpp"
#include "negdist/corpus.hpp"
#include "negdist/decoding.hpp"
#include "negdist/error.hpp"
#include "negdist/metrics.hpp"
#include "negdist/run_config.hpp"
#include "negdist/synth.hpp"
#include "negdist/training.hpp"
#include "negdist/version.hpp"

namespace negdist::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Manifest {
 public:
  explicit Manifest(std::string command) : start_(utc_now()) { doc_["command"] = std::move(command); }

  void set(const std::string& key, ordered_json value) { config_[key] = std::move(value); }
  void input(const std::string& role, const fs::path& path) { inputs_[role] = path.string(); }
  void output(const std::string& role, const fs::path& path) { outputs_[role] = path.string(); }
  void seed(std::uint64_t s) { doc_["seed"] = s; }

  void write(const fs::path& path) {
    doc_["config"] = config_;
    doc_["inputs"] = inputs_;
    doc_["outputs"] = outputs_;
    doc_["version"] = std::string(kVersion);
    doc_["started"] = start_;
    doc_["finished"] = utc_now();
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write manifest " + path.string());
    out << doc_.dump(2) << '\n';
    if (!out) throw Error(ErrorKind::Io, "failed writing manifest " + path.string());
  }

 private:
  std::string start_;
  ordered_json doc_ = ordered_json::object();
  ordered_json config_ = ordered_json::object();
  ordered_json inputs_ = ordered_json::object();
  ordered_json outputs_ = ordered_json::object();
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& path, const char* what) {
  if (path.empty()) throw Error(ErrorKind::Config, std::string(what) + " path is not set");
  if (!fs::exists(path)) throw Error(ErrorKind::Io, std::string(what) + " not found: " + path.string());
}

fs::path sibling_manifest(const fs::path& output) {
  fs::path p = output;
  p += ".manifest.json";
  return p;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Architecture:
    case ErrorKind::Domain:
      return kExitUsage;
    case ErrorKind::Data:
    case ErrorKind::EmptyInput:
    case ErrorKind::Truncation:
    case ErrorKind::Io:
      return kExitData;
    case ErrorKind::Shape:
    case ErrorKind::Alignment:
    case ErrorKind::UndefinedMean:
    case ErrorKind::UndefinedMetric:
    case ErrorKind::Numeric:
      return kExitNumeric;
  }
  return kExitNumeric;
}

ordered_json config_json(const RunConfig& config) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : config.entries()) j[k] = v;
  return j;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  synth::SynthConfig config;
  fs::path out;
  fs::path split_dir;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  Manifest m("synth");
  a.config.validate();
  const auto data = synth::generate(a.config);
  ensure_dir(a.out.has_parent_path() ? a.out.parent_path() : fs::path("."));
  corpus::save_tsv(a.out, data);
  m.seed(a.config.seed);
  m.set("templates", a.config.template_count);
  m.set("queries", a.config.query_count);
  m.set("generic_ratio", a.config.generic_ratio);
  m.set("query_words", a.config.query_words);
  m.set("synonyms", a.config.synonyms);
  m.set("min_query_length", a.config.min_query_length);
  m.set("max_query_length", a.config.max_query_length);
  m.output("corpus", a.out);
  if (!a.split_dir.empty()) {
    const auto parts = corpus::partition(data, a.valid_fraction, a.test_fraction, a.config.seed);
    ensure_dir(a.split_dir);
    corpus::save_tsv(a.split_dir / "train.tsv", parts.train);
    corpus::save_tsv(a.split_dir / "valid.tsv", parts.valid);
    corpus::save_tsv(a.split_dir / "test.tsv", parts.test);
    m.set("valid_fraction", a.valid_fraction);
    m.set("test_fraction", a.test_fraction);
    m.output("train", a.split_dir / "train.tsv");
    m.output("valid", a.split_dir / "valid.tsv");
    m.output("test", a.split_dir / "test.tsv");
    out << "wrote " << parts.train.size() << "/" << parts.valid.size() << "/" << parts.test.size()
        << " train/valid/test pairs to " << a.split_dir.string() << '\n';
  }
  m.write(sibling_manifest(a.out));
  out << "wrote " << data.size() << " pairs to " << a.out.string() << '\n';
}

struct FilterArgs {
  fs::path input;
  double ratio = 0.5;
  fs::path out_dir;
  std::size_t vocab_size = 100000;
};

void cmd_filter(const FilterArgs& a, std::ostream& out) {
  Manifest m("filter");
  require_file(a.input, "input corpus");
  const auto data = corpus::load_tsv(a.input, corpus::Split::Train);
  const auto table = corpus::source_entropy(data);
  const auto split = corpus::rank_and_split(data, table, a.ratio);
  const auto vocab = corpus::build_vocab(data, a.vocab_size);
  ensure_dir(a.out_dir);
  corpus::save_tsv(a.out_dir / "negative.tsv", split.negative);
  corpus::save_tsv(a.out_dir / "remaining.tsv", split.remaining);
  table.save_tsv(a.out_dir / "entropy.tsv");
  vocab.save(a.out_dir / "vocab.tsv");
  m.set("ratio", a.ratio);
  m.set("vocab_size", a.vocab_size);
  m.set("entropy_log_base", "e");
  m.input("corpus", a.input);
  for (const char* name : {"negative.tsv", "remaining.tsv", "entropy.tsv", "vocab.tsv"})
    m.output(name, a.out_dir / name);
  m.write(a.out_dir / "manifest.json");
  out << "negative set: " << split.negative.size() << " pairs, remaining: " << split.remaining.size()
      << " pairs, vocab: " << vocab.size() << " tokens\n";
}

corpus::Dataset load_encoded(const fs::path& path, corpus::Split split, const corpus::Vocab& vocab,
                             const char* what) {
  require_file(path, what);
  auto d = corpus::load_tsv(path, split);
  corpus::encode(d, vocab);
  return d;
}

void write_training_outputs(const fs::path& dir, const train::TrainResult& r, const char* checkpoint_name,
                            Manifest& m) {
  const fs::path ckpt = dir / checkpoint_name;
  checkpoint::save_parameters(ckpt, r.best);
  {
    std::ofstream log(dir / "train_log.csv");
    if (!log) throw Error(ErrorKind::Io, "cannot write training log");
    train::write_log_header(log);
    for (const auto& rec : r.log) train::write_log_line(log, rec);
  }
  {
    std::ofstream alpha(dir / "alpha.csv");
    if (!alpha) throw Error(ErrorKind::Io, "cannot write alpha log");
    alpha.precision(17);
    alpha << "step,alpha\n";
    for (std::size_t i = 0; i < r.step_alpha.size(); ++i) alpha << i + 1 << ',' << r.step_alpha[i] << '\n';
  }
  m.output("checkpoint", ckpt);
  m.output("train_log", dir / "train_log.csv");
  m.output("alpha_log", dir / "alpha.csv");
  m.set("best_step", r.best_step);
  m.set("best_valid_loss", r.best_valid_loss);
  m.set("steps_run", r.steps_run);
  m.set("early_stopped", r.early_stopped);
}

void cmd_train_teacher(const fs::path& config_path, std::ostream& out) {
  Manifest m("train-teacher");
  auto config = load_run_config(config_path);
  require_file(config.vocab, "vocab");
  const auto vocab = corpus::Vocab::load(config.vocab);
  config.model.vocab_size = vocab.size();
  const auto negative = load_encoded(config.negative_data, corpus::Split::Train, vocab, "negative_data");
  corpus::Dataset valid;
  if (!config.valid_data.empty()) {
    const auto full_valid = load_encoded(config.valid_data, corpus::Split::Valid, vocab, "valid_data");
    valid = corpus::rank_and_split(full_valid, corpus::source_entropy(full_valid), config.filter_ratio).negative;
    m.input("valid_data", config.valid_data);
  }
  ensure_dir(config.output_dir);
  const auto r = train::train_teacher(negative, valid, config.model, config.optim, config.distill.label_smoothing);
  m.seed(config.optim.seed);
  m.set("run", config_json(config));
  m.input("config", config_path);
  m.input("vocab", config.vocab);
  m.input("negative_data", config.negative_data);
  write_training_outputs(config.output_dir, r, "teacher.ckpt", m);
  m.write(config.output_dir / "manifest.json");
  out << "teacher: best valid loss " << r.best_valid_loss << " at step " << r.best_step << " of " << r.steps_run
      << '\n';
}

void cmd_distill(const fs::path& config_path, std::ostream& out) {
  Manifest m("distill");
  auto config = load_run_config(config_path);
  require_file(config.vocab, "vocab");
  const auto vocab = corpus::Vocab::load(config.vocab);
  config.model.vocab_size = vocab.size();
  auto raw = load_encoded(config.train_data, corpus::Split::Train, vocab, "train_data");
  corpus::Dataset valid;
  if (!config.valid_data.empty()) {
    valid = load_encoded(config.valid_data, corpus::Split::Valid, vocab, "valid_data");
    m.input("valid_data", config.valid_data);
  }
  const bool needs_negative =
      config.exclude_negative || (config.distill.target == loss::NegativeTarget::Random && config.distill.include_pred);
  corpus::Dataset negative;
  if (needs_negative) {
    negative = load_encoded(config.negative_data, corpus::Split::Train, vocab, "negative_data");
    m.input("negative_data", config.negative_data);
  }
  if (config.exclude_negative) {
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& p : negative.pairs) keys.emplace_back(corpus::normalize(p.raw_query), corpus::normalize(p.raw_response));
    std::sort(keys.begin(), keys.end());
    corpus::Dataset kept;
    for (auto& p : raw.pairs) {
      const std::pair<std::string, std::string> k{corpus::normalize(p.raw_query), corpus::normalize(p.raw_response)};
      if (!std::binary_search(keys.begin(), keys.end(), k)) kept.pairs.push_back(std::move(p));
    }
    raw = std::move(kept);
  }

  ensure_dir(config.output_dir);
  const bool alpha_always_zero = config.schedule.fixed_alpha ? *config.schedule.fixed_alpha == 0.0
                                                             : config.schedule.lambda == 0.0;
  train::TrainResult result(config.model);
  if (config.teacher.empty()) {
    if (!alpha_always_zero) throw Error(ErrorKind::Config, "distill needs a teacher checkpoint unless alpha is always 0");
    result = train::train_mle(raw, valid, config.model, config.optim, config.distill.label_smoothing);
  } else {
    require_file(config.teacher, "teacher checkpoint");
    const auto teacher = checkpoint::load_parameters(config.teacher);
    m.input("teacher", config.teacher);
    train::DistillOptions options;
    options.schedule = config.schedule;
    options.distill = config.distill;
    options.negative_pool = needs_negative ? &negative : nullptr;
    result = train::distill_student(raw, valid, teacher, config.model, config.optim, options);
  }
  m.seed(config.optim.seed);
  m.set("run", config_json(config));
  m.input("config", config_path);
  m.input("vocab", config.vocab);
  m.input("train_data", config.train_data);
  write_training_outputs(config.output_dir, result, "student.ckpt", m);
  m.write(config.output_dir / "manifest.json");
  out << "student: best valid loss " << result.best_valid_loss << " at step " << result.best_step << " of "
      << result.steps_run << '\n';
}

struct GenerateArgs {
  fs::path checkpoint;
  fs::path vocab;
  fs::path input;
  fs::path output;
  std::string strategy = "greedy";
  std::size_t beam_size = 5;
  double length_penalty = 1.0;
  std::size_t max_length = 32;
};

// First column of every non-blank line.
std::vector<std::string> read_queries(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (corpus::normalize(line).empty()) continue;
    out.push_back(line.substr(0, line.find('\t')));
  }
  if (out.empty()) throw Error(ErrorKind::EmptyInput, "no queries in " + path.string());
  return out;
}

void cmd_generate(const GenerateArgs& a, std::ostream& out) {
  Manifest m("generate");
  decode::DecodeConfig dc;
  if (a.strategy == "greedy")
    dc.strategy = decode::Strategy::Greedy;
  else if (a.strategy == "beam")
    dc.strategy = decode::Strategy::Beam;
  else
    throw Error(ErrorKind::Config, "strategy must be greedy or beam");
  dc.beam_size = a.beam_size;
  dc.length_penalty = a.length_penalty;
  dc.max_length = a.max_length;
  dc.validate();
  require_file(a.checkpoint, "checkpoint");
  require_file(a.vocab, "vocab");
  require_file(a.input, "input");
  const auto params = checkpoint::load_parameters(a.checkpoint);
  const auto vocab = corpus::Vocab::load(a.vocab);
  if (params.config.vocab_size != vocab.size())
    throw Error(ErrorKind::Architecture, "checkpoint vocab size " + std::to_string(params.config.vocab_size) +
                                             " differs from vocab file size " + std::to_string(vocab.size()));
  const auto queries = read_queries(a.input);
  std::vector<std::string> responses;
  responses.reserve(queries.size());
  for (const auto& q : queries) {
    const auto ids = corpus::tokenize(q, vocab);
    responses.push_back(corpus::detokenize(decode::decode(params, ids, dc), vocab));
  }
  ensure_dir(a.output.has_parent_path() ? a.output.parent_path() : fs::path("."));
  {
    std::ofstream f(a.output);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + a.output.string());
    for (std::size_t i = 0; i < queries.size(); ++i) f << corpus::normalize(queries[i]) << '\t' << responses[i] << '\n';
    if (!f) throw Error(ErrorKind::Io, "failed writing " + a.output.string());
  }
  m.set("strategy", a.strategy);
  m.set("beam_size", a.beam_size);
  m.set("length_penalty", a.length_penalty);
  m.set("max_length", a.max_length);
  m.input("checkpoint", a.checkpoint);
  m.input("vocab", a.vocab);
  m.input("queries", a.input);
  m.output("responses", a.output);
  m.write(sibling_manifest(a.output));
  out << "generated " << responses.size() << " responses\n";
}

struct EvaluateArgs {
  fs::path hypotheses;
  fs::path references;
  fs::path vocab;
  fs::path output;
  std::string kl_direction = "reference||generated";
  std::uint64_t lf_threshold = 100;
};

void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  Manifest m("evaluate");
  metrics::MetricsConfig mc;
  mc.kl_direction = metrics::parse_kl_direction(a.kl_direction);
  mc.lf_threshold = a.lf_threshold;
  require_file(a.hypotheses, "hypotheses");
  require_file(a.references, "references");
  require_file(a.vocab, "vocab");
  const auto hyp = metrics::load_text_pairs(a.hypotheses, true);
  const auto ref = metrics::load_text_pairs(a.references, false);
  if (hyp.size() != ref.size())
    throw Error(ErrorKind::Alignment, std::to_string(hyp.size()) + " hypotheses vs " + std::to_string(ref.size()) +
                                          " references");
  std::vector<std::string> gen_text, ref_text;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (corpus::normalize(hyp[i].query) != corpus::normalize(ref[i].query))
      throw Error(ErrorKind::Alignment, "query mismatch at line " + std::to_string(i + 1));
    gen_text.push_back(hyp[i].response);
    ref_text.push_back(ref[i].response);
  }
  const auto vocab = corpus::Vocab::load(a.vocab);
  const auto report = metrics::evaluate(metrics::to_corpus(gen_text), metrics::to_corpus(ref_text), vocab, mc);
  ensure_dir(a.output.has_parent_path() ? a.output.parent_path() : fs::path("."));
  {
    std::ofstream f(a.output);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + a.output.string());
    f << metrics::to_json(report) << '\n';
  }
  m.set("kl_direction", a.kl_direction);
  m.set("lf_threshold", a.lf_threshold);
  m.set("kl_epsilon", mc.kl_epsilon);
  m.set("bleu_variant", std::string(metrics::kBleuVariant));
  m.input("hypotheses", a.hypotheses);
  m.input("references", a.references);
  m.input("vocab", a.vocab);
  m.output("report", a.output);
  m.write(sibling_manifest(a.output));
  out << metrics::to_table(report);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Negative distillation toolkit for dialogue generation", "negdist"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic many-to-one dialogue corpus");
  synth->add_option("--templates", synth_args.config.template_count, "Number of generic templates")
      ->capture_default_str();
  synth->add_option("--queries", synth_args.config.query_count, "Number of pairs (one per query)")
      ->capture_default_str();
  synth->add_option("--generic-ratio", synth_args.config.generic_ratio, "Share of pairs with a template response")
      ->capture_default_str();
  synth->add_option("--seed", synth_args.config.seed, "Random seed")->capture_default_str();
  synth->add_option("--query-words", synth_args.config.query_words, "Query word inventory")->capture_default_str();
  synth->add_option("--synonyms", synth_args.config.synonyms, "Response synonyms per query word")
      ->capture_default_str();
  synth->add_option("--out", synth_args.out, "Output TSV")->required();
  synth->add_option("--split-dir", synth_args.split_dir, "Also write train/valid/test splits here");
  synth->add_option("--valid-fraction", synth_args.valid_fraction, "Validation share")->capture_default_str();
  synth->add_option("--test-fraction", synth_args.test_fraction, "Test share")->capture_default_str();

  FilterArgs filter_args;
  auto* filter = app.add_subcommand("filter", "Rank responses by source entropy and split off the negative set");
  filter->add_option("--input", filter_args.input, "Training TSV")->required();
  filter->add_option("--ratio", filter_args.ratio, "Share of pairs in the negative set")->capture_default_str();
  filter->add_option("--out-dir", filter_args.out_dir, "Output directory")->required();
  filter->add_option("--vocab-size", filter_args.vocab_size, "Vocabulary cap including reserved tokens")
      ->capture_default_str();

  fs::path teacher_config;
  auto* teacher = app.add_subcommand("train-teacher", "Train the negative teacher on the negative set");
  teacher->add_option("--config", teacher_config, "Run config file")->required();

  fs::path distill_config;
  auto* distill = app.add_subcommand("distill", "Train a student against the negative teacher");
  distill->add_option("--config", distill_config, "Run config file")->required();

  GenerateArgs gen_args;
  auto* generate = app.add_subcommand("generate", "Decode responses for a query file");
  generate->add_option("--checkpoint", gen_args.checkpoint, "Model checkpoint")->required();
  generate->add_option("--vocab", gen_args.vocab, "Vocabulary file")->required();
  generate->add_option("--input", gen_args.input, "Queries (first TSV column)")->required();
  generate->add_option("--output", gen_args.output, "Output TSV")->required();
  generate->add_option("--strategy", gen_args.strategy, "greedy or beam")
      ->check(CLI::IsMember({"greedy", "beam"}))
      ->capture_default_str();
  generate->add_option("--beam-size", gen_args.beam_size, "Beam width")->capture_default_str();
  generate->add_option("--length-penalty", gen_args.length_penalty, "Length-penalty exponent")
      ->capture_default_str();
  generate->add_option("--max-length", gen_args.max_length, "Maximum response tokens")->capture_default_str();

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "Score generated responses against references");
  evaluate->add_option("--hypotheses", eval_args.hypotheses, "Generated TSV")->required();
  evaluate->add_option("--references", eval_args.references, "Reference TSV")->required();
  evaluate->add_option("--vocab", eval_args.vocab, "Vocabulary with training frequencies")->required();
  evaluate->add_option("--output", eval_args.output, "Report JSON")->required();
  evaluate->add_option("--kl-direction", eval_args.kl_direction, "reference||generated or generated||reference")
      ->capture_default_str();
  evaluate->add_option("--lf-threshold", eval_args.lf_threshold, "Low-frequency threshold")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "negdist: error[usage_error]: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (synth->parsed()) cmd_synth(synth_args, out);
    if (filter->parsed()) cmd_filter(filter_args, out);
    if (teacher->parsed()) cmd_train_teacher(teacher_config, out);
    if (distill->parsed()) cmd_distill(distill_config, out);
    if (generate->parsed()) cmd_generate(gen_args, out);
    if (evaluate->parsed()) cmd_evaluate(eval_args, out);
  } catch (const Error& e) {
    err << "negdist: error[" << error_code(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "negdist: error[internal_error]: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace negdist::cli
