#pragma once

#include <stdexcept>
#include <string>

namespace dsmil {

// Every library failure carries a short machine-readable code. The CLI prints
// it as the prefix of its single-line error report.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define DSMIL_DEFINE_ERROR(Name, Code)                                   \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(Code, message) {}  \
  }

DSMIL_DEFINE_ERROR(DimensionError, "E_DIMENSION");
DSMIL_DEFINE_ERROR(ShapeError, "E_SHAPE");
DSMIL_DEFINE_ERROR(ValidationError, "E_VALIDATION");
DSMIL_DEFINE_ERROR(TapeError, "E_TAPE");
DSMIL_DEFINE_ERROR(OptimizerError, "E_OPTIMIZER");
DSMIL_DEFINE_ERROR(MiningError, "E_MINING");
DSMIL_DEFINE_ERROR(ParseError, "E_PARSE");
DSMIL_DEFINE_ERROR(IoError, "E_IO");
DSMIL_DEFINE_ERROR(CompatibilityError, "E_COMPATIBILITY");
DSMIL_DEFINE_ERROR(LookupError, "E_LOOKUP");
DSMIL_DEFINE_ERROR(EvaluationError, "E_EVALUATION");

#undef DSMIL_DEFINE_ERROR

}  // namespace dsmil
