#pragma once

#include <stdexcept>
#include <string>

namespace segprobe {

/// Base for every data/validation failure raised by the library. Anything
/// else escaping a call (std::bad_alloc, filesystem errors) is a runtime fault.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StoreError : public Error {
 public:
  enum class Kind {
    MissingFile,
    Schema,
    DuplicateId,
    DimensionMismatch,
    UnknownId,
    Io,
    Decode,
    Precondition,
  };

  StoreError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class MaskError : public Error {
 public:
  enum class Kind { InvalidLabel, Format, Io, Shape };

  MaskError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// synth_noisy could not bring the mask into the requested quality window.
class CalibrationError : public Error {
 public:
  CalibrationError(double achieved_miou_pct, const std::string& what)
      : Error(what), achieved_(achieved_miou_pct) {}
  double achieved_miou_pct() const noexcept { return achieved_; }

 private:
  double achieved_;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace segprobe
