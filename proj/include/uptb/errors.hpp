#pragma once

#include <stdexcept>
#include <string>

namespace uptb {

// Base for every error raised by the library. `kind()` is a stable short tag
// used in machine-readable CLI error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define UPTB_DEFINE_ERROR(Name, tag)                                     \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(tag, what) {}         \
  };

UPTB_DEFINE_ERROR(ShapeError, "shape")
UPTB_DEFINE_ERROR(DomainError, "domain")
UPTB_DEFINE_ERROR(ContractError, "contract")
UPTB_DEFINE_ERROR(ConfigError, "config")
UPTB_DEFINE_ERROR(LengthError, "length")
UPTB_DEFINE_ERROR(InfeasibleAlignmentError, "infeasible-alignment")
UPTB_DEFINE_ERROR(FormatError, "format")
UPTB_DEFINE_ERROR(IoError, "io")
UPTB_DEFINE_ERROR(DivergenceError, "divergence")

#undef UPTB_DEFINE_ERROR

}  // namespace uptb
