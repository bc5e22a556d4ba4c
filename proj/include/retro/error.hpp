#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace retro {

enum class ErrorCode {
  InvalidTemplate,
  DegenerateDistribution,
  InvalidDistribution,
  InvalidLabelSpace,
  MissingLabel,
  EmptyCorpus,
  DimensionMismatch,
  CorruptStore,
  InvalidK,
  TooManyLists,
  EmptyNeighborhood,
  ZeroNorm,
  UnknownToken,
  UnknownLabel,
  MixedModes,
  DivergedTraining,
  SingularHessian,
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library carries one of the codes above so the
// CLI can emit a structured error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace retro
