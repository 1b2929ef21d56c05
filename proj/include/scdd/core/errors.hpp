#pragma once

#include <stdexcept>
#include <string>

namespace scdd {

/// Base of every error thrown by the library. The kind() string is what the
/// CLI prints next to the failing stage.
class Error : public std::runtime_error {
 public:
  Error(const char* kind, const std::string& what)
      : std::runtime_error(std::string(kind) + ": " + what), kind_(kind) {}
  const char* kind() const noexcept { return kind_; }

 private:
  const char* kind_;
};

#define SCDD_DEFINE_ERROR(Name, label)                              \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(label, what) {} \
  };

SCDD_DEFINE_ERROR(ConfigError, "configuration error")
SCDD_DEFINE_ERROR(PreconditionError, "precondition error")
SCDD_DEFINE_ERROR(ShapeError, "shape error")
SCDD_DEFINE_ERROR(UnsupportedModelError, "unsupported model")
SCDD_DEFINE_ERROR(DataError, "data error")
SCDD_DEFINE_ERROR(DomainError, "domain error")
SCDD_DEFINE_ERROR(PrecisionError, "precision error")
SCDD_DEFINE_ERROR(StateError, "state error")
SCDD_DEFINE_ERROR(FormatError, "format error")
SCDD_DEFINE_ERROR(IoError, "I/O error")
SCDD_DEFINE_ERROR(DivergenceError, "divergence")

#undef SCDD_DEFINE_ERROR

}  // namespace scdd
