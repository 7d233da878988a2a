#pragma once

#include <stdexcept>
#include <string>

namespace ssp {

// Malformed container: wrong magic, dtype, or shape.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Data violates a record invariant (one-hot rows, mask/label consistency).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Split index sets out of range or overlapping.
class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value or unknown option.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Records that should line up across files do not.
class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ssp
