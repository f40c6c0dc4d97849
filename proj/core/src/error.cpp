#include "negdist/error.hpp"

namespace negdist {

std::string_view error_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return "config_error";
    case ErrorKind::Architecture: return "architecture_error";
    case ErrorKind::Domain: return "domain_error";
    case ErrorKind::Data: return "data_error";
    case ErrorKind::EmptyInput: return "empty_input";
    case ErrorKind::Truncation: return "truncation_error";
    case ErrorKind::Io: return "io_error";
    case ErrorKind::Shape: return "shape_error";
    case ErrorKind::Alignment: return "alignment_error";
    case ErrorKind::UndefinedMean: return "undefined_mean";
    case ErrorKind::UndefinedMetric: return "undefined_metric";
    case ErrorKind::Numeric: return "numeric_error";
  }
  return "unknown_error";
}

}  // namespace negdist
