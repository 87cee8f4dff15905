#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedgs {

enum class ErrorCode {
  ZeroTotal,
  EmptyFederation,
  LengthMismatch,
  InvalidDistribution,
  DegenerateProblem,
  NoFeasiblePair,
  UnequalBatchSizes,
  InstanceTooLarge,
  MalformedInstance,
  ShapeMismatch,
  NonFiniteLoss,
  EmptySet,
  InvalidConfig,
  StreamExhausted,
  MalformedManifest,
  InvalidParams,
  InsufficientEligibleDevices,
  IoError,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type; `code()` is the
// stable discriminator, `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fedgs
