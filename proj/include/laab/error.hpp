#pragma once

#include <stdexcept>
#include <string>

namespace laab {

// Base of every error the engine raises. The C API maps each subclass to a
// status code, so new kinds must be added there as well.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched tensor shapes or feature dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in a forward value, a gradient, or a loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Inputs that violate a documented precondition (labels, judgment tokens,
// ratios, configs, packs).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A feature pack whose manifest, records or blob disagree.
class CorruptPackError : public ValidationError {
 public:
  CorruptPackError(const std::string& record_id, const std::string& what)
      : ValidationError("corrupt pack (record '" + record_id + "'): " + what),
        record_id_(record_id) {}

  const std::string& record_id() const noexcept { return record_id_; }

 private:
  std::string record_id_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace laab
