#ifndef FORESTLPR_ERROR_HPP
#define FORESTLPR_ERROR_HPP

#include <stdexcept>
#include <string>

namespace forestlpr {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file (PCD header, manifest line, model magic, ...).
struct ParseError : Error {
  using Error::Error;
};

// Recognized file but unsupported variant (e.g. binary_compressed PCD).
struct UnsupportedFormatError : Error {
  using Error::Error;
};

// Invalid or out-of-range configuration value.
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite intermediate, undefined descriptor, undefined metric.
struct NumericError : Error {
  using Error::Error;
};

// Missing poses, empty sequences, no valid triplets.
struct DatasetError : Error {
  using Error::Error;
};

// Degenerate input that the algorithm cannot process (< 4 points, ...).
struct DegenerateInputError : Error {
  using Error::Error;
};

// API misuse (e.g. gradient requested for a value not on the tape).
struct UsageError : Error {
  using Error::Error;
};

}  // namespace forestlpr

#endif
