#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tmsopt {

enum class ErrorKind {
  invalid_waveform,
  invalid_dof,
  invalid_parameters,
  integration_failure,
  non_excitable_shape,
  titration_ambiguous,
  infeasible_result,
  optimization_failed,
  segmentation_failed,
  undefined_metric,
  window_overflow,
  invalid_cutoff,
  parse_error,
  io_error,
};

constexpr std::string_view kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_waveform: return "invalid_waveform";
    case ErrorKind::invalid_dof: return "invalid_dof";
    case ErrorKind::invalid_parameters: return "invalid_parameters";
    case ErrorKind::integration_failure: return "integration_failure";
    case ErrorKind::non_excitable_shape: return "non_excitable_shape";
    case ErrorKind::titration_ambiguous: return "titration_ambiguous";
    case ErrorKind::infeasible_result: return "infeasible_result";
    case ErrorKind::optimization_failed: return "optimization_failed";
    case ErrorKind::segmentation_failed: return "segmentation_failed";
    case ErrorKind::undefined_metric: return "undefined_metric";
    case ErrorKind::window_overflow: return "window_overflow";
    case ErrorKind::invalid_cutoff: return "invalid_cutoff";
    case ErrorKind::parse_error: return "parse_error";
    case ErrorKind::io_error: return "io_error";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace tmsopt
