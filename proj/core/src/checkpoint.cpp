#include "negdist/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "negdist/error.hpp"

namespace negdist::checkpoint {
namespace {

constexpr std::string_view kMagic = "negdist-tensors";

template <class UInt>
void put_le(std::ostream& out, UInt bits) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(UInt));
}

template <class UInt>
UInt get_le(std::istream& in) {
  unsigned char bytes[sizeof(UInt)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(UInt)))
    throw Error(ErrorKind::Data, "tensor file: truncated payload");
  UInt bits = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bits |= static_cast<UInt>(bytes[i]) << (8 * i);
  return bits;
}

std::string_view dtype_name(DType t) { return t == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  throw Error(ErrorKind::Data, "tensor file: unknown dtype '" + s + "'");
}

std::size_t parse_size(const std::string& s, std::string_view what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error(ErrorKind::Data, "tensor file: bad " + std::string(what) + " '" + s + "'");
  }
}

}  // namespace

std::optional<std::string> TensorFile::find(std::string_view key) const {
  for (const auto& [k, v] : header)
    if (k == key) return v;
  return std::nullopt;
}

const std::string& TensorFile::at(std::string_view key) const {
  for (const auto& [k, v] : header)
    if (k == key) return v;
  throw Error(ErrorKind::Data, "tensor file: missing header key '" + std::string(key) + "'");
}

const NamedTensor* TensorFile::tensor(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void write_tensor_file(std::ostream& out, const TensorFile& file) {
  out << kMagic << ' ' << kFormatVersion << '\n';
  for (const auto& [k, v] : file.header) {
    if (k.empty() || k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      throw Error(ErrorKind::Data, "tensor file: header entry '" + k + "' is not a single-line key/value");
    out << k << ' ' << v << '\n';
  }
  for (const auto& t : file.tensors)
    out << "tensor " << t.name << ' ' << dtype_name(t.dtype) << ' ' << t.value.rows() << ' ' << t.value.cols()
        << '\n';
  out << "end\n";
  for (const auto& t : file.tensors) {
    const double* data = t.value.data();
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      if (t.dtype == DType::F32) {
        put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(data[i])));
      } else {
        put_le(out, std::bit_cast<std::uint64_t>(data[i]));
      }
    }
  }
  if (!out) throw Error(ErrorKind::Io, "tensor file: write failed");
}

TensorFile read_tensor_file(std::istream& in) {
  TensorFile file;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Data, "tensor file: empty");
  {
    std::istringstream first(line);
    std::string magic;
    int version = 0;
    first >> magic >> version;
    if (magic != kMagic) throw Error(ErrorKind::Data, "tensor file: bad magic");
    if (version != kFormatVersion)
      throw Error(ErrorKind::Data, "tensor file: unsupported format version " + std::to_string(version));
  }
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto space = line.find(' ');
    const std::string key = line.substr(0, space);
    const std::string value = space == std::string::npos ? std::string() : line.substr(space + 1);
    if (key == "tensor") {
      std::istringstream fields(value);
      std::string name, dtype, rows, cols, extra;
      fields >> name >> dtype >> rows >> cols;
      if (cols.empty() || (fields >> extra)) throw Error(ErrorKind::Data, "tensor file: bad tensor line '" + line + "'");
      NamedTensor t;
      t.name = name;
      t.dtype = parse_dtype(dtype);
      t.value.resize(static_cast<Eigen::Index>(parse_size(rows, "rows")),
                     static_cast<Eigen::Index>(parse_size(cols, "cols")));
      file.tensors.push_back(std::move(t));
    } else {
      file.header.emplace_back(key, value);
    }
  }
  if (!ended) throw Error(ErrorKind::Data, "tensor file: header not terminated");
  for (auto& t : file.tensors) {
    double* data = t.value.data();
    for (Eigen::Index i = 0; i < t.value.size(); ++i)
      data[i] = t.dtype == DType::F32 ? static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in)))
                                      : std::bit_cast<double>(get_le<std::uint64_t>(in));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorKind::Data, "tensor file: trailing bytes");
  return file;
}

void save_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  write_tensor_file(out, file);
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for reading");
  return read_tensor_file(in);
}

std::vector<std::pair<std::string, std::string>> config_header(const model::ModelConfig& c) {
  std::ostringstream dropout;
  dropout.precision(17);
  dropout << c.dropout_rate;
  return {
      {"num_encoder_layers", std::to_string(c.num_encoder_layers)},
      {"num_decoder_layers", std::to_string(c.num_decoder_layers)},
      {"num_heads", std::to_string(c.num_heads)},
      {"d_model", std::to_string(c.d_model)},
      {"d_ff", std::to_string(c.d_ff)},
      {"d_k", std::to_string(c.d_k)},
      {"vocab_size", std::to_string(c.vocab_size)},
      {"max_sequence_length", std::to_string(c.max_sequence_length)},
      {"dropout_rate", dropout.str()},
  };
}

model::ModelConfig config_from_header(const TensorFile& file) {
  model::ModelConfig c;
  c.num_encoder_layers = parse_size(file.at("num_encoder_layers"), "num_encoder_layers");
  c.num_decoder_layers = parse_size(file.at("num_decoder_layers"), "num_decoder_layers");
  c.num_heads = parse_size(file.at("num_heads"), "num_heads");
  c.d_model = parse_size(file.at("d_model"), "d_model");
  c.d_ff = parse_size(file.at("d_ff"), "d_ff");
  c.d_k = parse_size(file.at("d_k"), "d_k");
  c.vocab_size = parse_size(file.at("vocab_size"), "vocab_size");
  c.max_sequence_length = parse_size(file.at("max_sequence_length"), "max_sequence_length");
  try {
    c.dropout_rate = std::stod(file.at("dropout_rate"));
  } catch (const std::invalid_argument&) {
    throw Error(ErrorKind::Data, "tensor file: bad dropout_rate");
  }
  return c;
}

void append_parameters(TensorFile& file, const model::Parameters& params, DType dtype, const std::string& prefix) {
  const auto names = params.names();
  const auto tensors = params.tensors();
  for (std::size_t i = 0; i < names.size(); ++i) file.tensors.push_back({prefix + names[i], dtype, *tensors[i]});
}

void extract_parameters(const TensorFile& file, model::Parameters& params, const std::string& prefix) {
  const auto names = params.names();
  const auto tensors = params.tensors();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const NamedTensor* t = file.tensor(prefix + names[i]);
    if (t == nullptr) throw Error(ErrorKind::Data, "tensor file: missing tensor '" + prefix + names[i] + "'");
    if (t->value.rows() != tensors[i]->rows() || t->value.cols() != tensors[i]->cols())
      throw Error(ErrorKind::Architecture, "tensor file: shape mismatch for '" + prefix + names[i] + "'");
    *tensors[i] = t->value;
  }
}

void save_parameters(const std::filesystem::path& path, const model::Parameters& params) {
  TensorFile file;
  file.header.emplace_back("kind", "parameters");
  for (auto& kv : config_header(params.config)) file.header.push_back(std::move(kv));
  append_parameters(file, params, DType::F32);
  save_tensor_file(path, file);
}

model::Parameters load_parameters(const std::filesystem::path& path) {
  const TensorFile file = load_tensor_file(path);
  model::Parameters params(config_from_header(file));
  extract_parameters(file, params);
  return params;
}

}  // namespace negdist::checkpoint
