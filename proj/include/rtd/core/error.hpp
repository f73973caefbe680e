#pragma once

#include <stdexcept>
#include <string>

namespace rtd {

// Broad failure classes. The CLI maps each class to its own exit code.
enum class ErrorClass { config, data, divergence };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), class_(cls) {}
  ErrorClass error_class() const noexcept { return class_; }

 private:
  ErrorClass class_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorClass::config, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorClass::data, "io error: " + what) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorClass::data, "format error: " + what) {}
};

struct IntegrityError : Error {
  explicit IntegrityError(const std::string& what) : Error(ErrorClass::data, "integrity error: " + what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorClass::data, "shape error: " + what) {}
};

struct OutOfBoundsError : Error {
  explicit OutOfBoundsError(const std::string& what) : Error(ErrorClass::data, "out of bounds: " + what) {}
};

struct DegenerateChannelError : Error {
  explicit DegenerateChannelError(const std::string& what)
      : Error(ErrorClass::data, "degenerate channel: " + what) {}
};

struct UndefinedMetricError : Error {
  explicit UndefinedMetricError(const std::string& what)
      : Error(ErrorClass::data, "undefined metric: " + what) {}
};

struct LabelError : Error {
  explicit LabelError(const std::string& what) : Error(ErrorClass::data, "label error: " + what) {}
};

struct DivergenceError : Error {
  explicit DivergenceError(const std::string& what) : Error(ErrorClass::divergence, "divergence: " + what) {}
};

inline int exit_code(ErrorClass cls) {
  switch (cls) {
    case ErrorClass::config: return 2;
    case ErrorClass::data: return 3;
    case ErrorClass::divergence: return 4;
  }
  return 1;
}

}  // namespace rtd
