#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wassdiff {

enum class ErrorKind {
  invalid_input,
  singular_time,
  unsupported_dimension,
  infeasible_budget,
  size_limit,
  tolerance_not_met,
  divergence,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::singular_time: return "singular-time";
    case ErrorKind::unsupported_dimension: return "unsupported-dimension";
    case ErrorKind::infeasible_budget: return "infeasible-budget";
    case ErrorKind::size_limit: return "size-limit";
    case ErrorKind::tolerance_not_met: return "tolerance-not-met";
    case ErrorKind::divergence: return "divergence";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by the samplers when a trajectory leaves the finite range.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, std::size_t replicate)
      : Error(ErrorKind::divergence, "trajectory " + std::to_string(replicate) +
                                         " diverged at step " + std::to_string(step)),
        step_(step),
        replicate_(replicate) {}

  std::size_t step() const noexcept { return step_; }
  std::size_t replicate() const noexcept { return replicate_; }

 private:
  std::size_t step_;
  std::size_t replicate_;
};

// Takes a view so that literal messages cost nothing on the passing path.
inline void require(bool condition, ErrorKind kind, std::string_view what) {
  if (!condition) throw Error(kind, std::string(what));
}

}  // namespace wassdiff
