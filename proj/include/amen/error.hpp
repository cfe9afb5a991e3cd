#pragma once

#include <stdexcept>
#include <string>

namespace amen {

// Base for every error raised by the library. Each subclass marks a distinct
// failure category so callers (and the CLI) can react without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error("invalid '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class TrainingError : public Error {
 public:
  TrainingError(std::size_t epoch, const std::string& what)
      : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  // Re-raise an error from one branch with the scale it belongs to.
  TrainingError(const TrainingError& inner, std::size_t scale)
      : Error("scale " + std::to_string(scale) + ": " + inner.what()),
        epoch_(inner.epoch_), scale_(scale) {}

  std::size_t epoch() const noexcept { return epoch_; }
  // 1-based scale index, 0 when not yet annotated.
  std::size_t scale() const noexcept { return scale_; }

 private:
  std::size_t epoch_;
  std::size_t scale_ = 0;
};

}  // namespace amen
