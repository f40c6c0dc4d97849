#include "negdist/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "negdist/corpus.hpp"
#include "negdist/error.hpp"

namespace negdist {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw Error(ErrorKind::Config, key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  double out = 0.0;
  in >> out;
  if (!in || !in.eof()) throw Error(ErrorKind::Config, key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::Config, key + ": expected true or false, got '" + v + "'");
}

std::string real_text(double x) {
  std::ostringstream out;
  out.precision(17);
  out << x;
  return out.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field size_field(T RunConfig::*group, std::size_t T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.*group.*member = to_size(k, v); },
          [=](const RunConfig& c) { return std::to_string(c.*group.*member); }};
}

template <typename T>
Field real_field(T RunConfig::*group, double T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.*group.*member = to_real(k, v); },
          [=](const RunConfig& c) { return real_text(c.*group.*member); }};
}

template <typename T>
Field bool_field(T RunConfig::*group, bool T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.*group.*member = to_bool(k, v); },
          [=](const RunConfig& c) { return std::string(c.*group.*member ? "true" : "false"); }};
}

Field path_field(std::filesystem::path RunConfig::*member) {
  return {[=](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [=](const RunConfig& c) { return (c.*member).string(); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  using M = model::ModelConfig;
  using O = train::OptimConfig;
  using S = loss::ScheduleConfig;
  using D = loss::DistillConfig;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"train_data", path_field(&RunConfig::train_data)},
      {"valid_data", path_field(&RunConfig::valid_data)},
      {"negative_data", path_field(&RunConfig::negative_data)},
      {"vocab", path_field(&RunConfig::vocab)},
      {"teacher", path_field(&RunConfig::teacher)},
      {"output_dir", path_field(&RunConfig::output_dir)},
      {"filter_ratio",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.filter_ratio = to_real(k, v); },
        [](const RunConfig& c) { return real_text(c.filter_ratio); }}},
      {"exclude_negative",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.exclude_negative = to_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.exclude_negative ? "true" : "false"); }}},
      {"num_encoder_layers", size_field(&RunConfig::model, &M::num_encoder_layers)},
      {"num_decoder_layers", size_field(&RunConfig::model, &M::num_decoder_layers)},
      {"num_heads", size_field(&RunConfig::model, &M::num_heads)},
      {"d_model", size_field(&RunConfig::model, &M::d_model)},
      {"d_ff", size_field(&RunConfig::model, &M::d_ff)},
      {"d_k", size_field(&RunConfig::model, &M::d_k)},
      {"max_sequence_length", size_field(&RunConfig::model, &M::max_sequence_length)},
      {"dropout", real_field(&RunConfig::model, &M::dropout_rate)},
      {"warmup_steps", size_field(&RunConfig::optim, &O::warmup_steps)},
      {"batch_size", size_field(&RunConfig::optim, &O::batch_size)},
      {"max_steps", size_field(&RunConfig::optim, &O::max_steps)},
      {"adam_beta1", real_field(&RunConfig::optim, &O::beta1)},
      {"adam_beta2", real_field(&RunConfig::optim, &O::beta2)},
      {"adam_epsilon", real_field(&RunConfig::optim, &O::epsilon)},
      {"seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.optim.seed = to_size(k, v); },
        [](const RunConfig& c) { return std::to_string(c.optim.seed); }}},
      {"validation_interval", size_field(&RunConfig::optim, &O::validation_interval)},
      {"patience", size_field(&RunConfig::optim, &O::patience)},
      {"lambda", real_field(&RunConfig::schedule, &S::lambda)},
      {"beta", real_field(&RunConfig::schedule, &S::beta)},
      {"gamma", real_field(&RunConfig::schedule, &S::gamma)},
      {"fixed_alpha",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "none")
            c.schedule.fixed_alpha.reset();
          else
            c.schedule.fixed_alpha = to_real(k, v);
        },
        [](const RunConfig& c) {
          return c.schedule.fixed_alpha ? real_text(*c.schedule.fixed_alpha) : std::string("none");
        }}},
      {"temperature", real_field(&RunConfig::distill, &D::temperature)},
      {"label_smoothing", real_field(&RunConfig::distill, &D::label_smoothing)},
      {"include_pred", bool_field(&RunConfig::distill, &D::include_pred)},
      {"include_hidden", bool_field(&RunConfig::distill, &D::include_hidden)},
      {"include_attention", bool_field(&RunConfig::distill, &D::include_attention)},
      {"negative_target",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.distill.target = parse_negative_target(v); },
        [](const RunConfig& c) { return to_string(c.distill.target); }}},
  };
  return table;
}

}  // namespace

RunConfig::RunConfig() {
  model.num_encoder_layers = 2;
  model.num_decoder_layers = 2;
  model.num_heads = 4;
  model.d_model = 64;
  model.d_ff = 128;
  model.d_k = 16;
  model.max_sequence_length = 64;
  model.dropout_rate = 0.1;
  optim.d_model = model.d_model;
  schedule.gamma = 2.0 * static_cast<double>(optim.warmup_steps);
  schedule.beta = 6.0 / schedule.gamma;
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [key, field] : fields()) out.emplace_back(key, field.get(*this));
  out.emplace_back("vocab_size", std::to_string(model.vocab_size));
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [key, field] : fields()) v.push_back(key);
    return v;
  }();
  return names;
}

std::string to_string(loss::NegativeTarget target) {
  switch (target) {
    case loss::NegativeTarget::Soft:
      return "soft";
    case loss::NegativeTarget::Hard:
      return "hard";
    case loss::NegativeTarget::Random:
      return "random";
  }
  return "soft";
}

loss::NegativeTarget parse_negative_target(std::string_view text) {
  if (text == "soft") return loss::NegativeTarget::Soft;
  if (text == "hard") return loss::NegativeTarget::Hard;
  if (text == "random") return loss::NegativeTarget::Random;
  throw Error(ErrorKind::Config, "negative_target must be soft, hard or random, got '" + std::string(text) + "'");
}

RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir, std::string_view source_name) {
  std::map<std::string, const Field*> lookup;
  for (const auto& [key, field] : fields()) lookup.emplace(key, &field);

  RunConfig config;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto where = std::string(source_name) + ":" + std::to_string(line_no) + ": ";
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Config, where + "expected key = value");
    const std::string key = trim(std::string_view(text).substr(0, eq));
    const std::string value = trim(std::string_view(text).substr(eq + 1));
    const auto it = lookup.find(key);
    if (it == lookup.end()) throw Error(ErrorKind::Config, where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw Error(ErrorKind::Config, where + "duplicate key '" + key + "'");
    if (value.empty()) throw Error(ErrorKind::Config, where + "empty value for '" + key + "'");
    try {
      it->second->set(config, key, value);
    } catch (const Error& e) {
      throw Error(e.kind(), where + e.what());
    }
  }

  if (!seen.count("d_k") && config.model.num_heads > 0) config.model.d_k = config.model.d_model / config.model.num_heads;
  config.optim.d_model = config.model.d_model;
  if (!seen.count("gamma")) config.schedule.gamma = 2.0 * static_cast<double>(config.optim.warmup_steps);
  if (!seen.count("beta") && config.schedule.gamma > 0.0) config.schedule.beta = 6.0 / config.schedule.gamma;

  for (auto* p : {&config.train_data, &config.valid_data, &config.negative_data, &config.vocab, &config.teacher,
                  &config.output_dir})
    if (!p->empty() && p->is_relative() && !base_dir.empty()) *p = base_dir / *p;

  if (!(config.filter_ratio > 0.0 && config.filter_ratio < 1.0))
    throw Error(ErrorKind::Config, "filter_ratio must lie in (0, 1)");
  if (config.model.d_model != config.model.num_heads * config.model.d_k)
    throw Error(ErrorKind::Architecture, "d_model must equal num_heads * d_k");
  config.optim.validate();
  config.schedule.validate();
  config.distill.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path.string());
  return parse_run_config(in, path.parent_path(), path.string());
}

}  // namespace negdist
