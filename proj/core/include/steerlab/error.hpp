#pragma once

#include <stdexcept>
#include <string>

namespace steerlab {

// Contract violation by the caller: bad shapes, out-of-range indices,
// malformed arguments.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input data cannot support the requested computation (single-class labels,
// no contrastive pairs, non-finite loss, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// On-disk artifact is malformed: bad magic, unsupported version, truncation,
// checksum mismatch, schema violations.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File is not the expected artifact kind (magic bytes / format tag).
class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Artifact kind is right but its format version is not supported.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace steerlab
