#pragma once

#include <stdexcept>
#include <string>

namespace car {

// Root of every library exception. `kind()` is a short stable tag used by the
// CLI to map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CAR_DEFINE_ERROR(Name, tag)                          \
  class Name : public Error {                                \
   public:                                                   \
    explicit Name(const std::string& what) : Error(tag, what) {} \
  };

CAR_DEFINE_ERROR(DimensionError, "dimension")
CAR_DEFINE_ERROR(RankError, "rank")
CAR_DEFINE_ERROR(DegenerateClassError, "degenerate-class")
CAR_DEFINE_ERROR(EmptyBatchError, "empty-batch")
CAR_DEFINE_ERROR(NumericError, "numeric")
CAR_DEFINE_ERROR(ParameterError, "parameter")
CAR_DEFINE_ERROR(ProfileError, "profile")
CAR_DEFINE_ERROR(IngestionError, "ingestion")
CAR_DEFINE_ERROR(ReportError, "report")
CAR_DEFINE_ERROR(InvalidRegimeError, "invalid-regime")
CAR_DEFINE_ERROR(UnsupportedModelError, "unsupported-model")
CAR_DEFINE_ERROR(IoError, "io")
CAR_DEFINE_ERROR(FormatError, "format")

#undef CAR_DEFINE_ERROR

}  // namespace car
