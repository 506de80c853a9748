#pragma once

#include <stdexcept>
#include <string>

namespace soz {

/// Base for every error this library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// On-disk artifact failed a consistency check (hash, counts, manifest).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// File ended before the declared payload.
class TruncatedError : public IntegrityError {
 public:
  using IntegrityError::IntegrityError;
};

/// Artifact written by an unknown format version.
class VersionError : public IntegrityError {
 public:
  using IntegrityError::IntegrityError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Wraps a failure inside one leave-one-patient-out fold.
class FoldError : public Error {
 public:
  FoldError(std::string patient_id, const std::string& what)
      : Error("fold " + patient_id + ": " + what), patient_id_(std::move(patient_id)) {}

  const std::string& patient_id() const noexcept { return patient_id_; }

 private:
  std::string patient_id_;
};

}  // namespace soz
