// Shared error types and check macros used across the library.
#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace driftpfn {

// Invalid or inconsistent configuration values. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or unusable input data (files, datasets, splits). CLI exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-recoverable fault during optimization (NaN loss, exhausted retries).
// CLI exit code 4.
struct TrainingFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Episode exceeds model capacity (too many features or classes).
struct CapacityError : DataError {
  using DataError::DataError;
};

// Internal retry signal: the current draw is degenerate, the caller should
// resample. Never escapes the sampling loop.
struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
[[noreturn]] inline void check_failed(const char* expr, const char* file,
                                      int line, const std::string& msg) {
  std::fprintf(stderr, "invariant violation: %s at %s:%d%s%s\n", expr, file,
               line, msg.empty() ? "" : ": ", msg.c_str());
  std::abort();
}
}  // namespace detail

// Hard internal invariant. Violations indicate a bug, not bad input.
#define DRIFTPFN_CHECK(cond, ...)                                     \
  do {                                                                \
    if (!(cond)) {                                                    \
      ::driftpfn::detail::check_failed(#cond, __FILE__, __LINE__,     \
                                       std::string(__VA_ARGS__));     \
    }                                                                 \
  } while (0)

}  // namespace driftpfn
