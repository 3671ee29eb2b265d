#pragma once

#include <stdexcept>
#include <string>

namespace fcplan {

enum class ErrorKind {
  degenerate_grid,
  invalid_parameter,
  off_grid,
  resolution,
  parse,
  empty_trace,
  range,
  shape,
  undefined_ratio,
  data,
  training_failure,
  problem_infeasible,
  validation,
  dependency,
  io,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::degenerate_grid: return "degenerate-grid";
    case ErrorKind::invalid_parameter: return "invalid-parameter";
    case ErrorKind::off_grid: return "off-grid";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::parse: return "parse";
    case ErrorKind::empty_trace: return "empty-trace";
    case ErrorKind::range: return "range";
    case ErrorKind::shape: return "shape";
    case ErrorKind::undefined_ratio: return "undefined-ratio";
    case ErrorKind::data: return "data";
    case ErrorKind::training_failure: return "training-failure";
    case ErrorKind::problem_infeasible: return "problem-infeasible";
    case ErrorKind::validation: return "validation";
    case ErrorKind::dependency: return "dependency";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

// Every failure raised by the library carries a kind so callers (and the CLI
// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace fcplan
