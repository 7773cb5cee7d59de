#ifndef STITCH_ERRORS_HPP
#define STITCH_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace stitch {

// Maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Maps to CLI exit code 3.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Maps to CLI exit code 4.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stitch

#endif
