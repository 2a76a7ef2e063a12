#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace probembed {

enum class ErrorCode {
  InvalidArgument,
  InvalidConfig,
  ZeroVector,
  NonPositiveSigma,
  DimMismatch,
  BadMagic,
  VersionMismatch,
  TruncatedFile,
  IoError,
  IndexOutOfRange,
  MetricSigmaModeMismatch,
  AllocationFailure,
  NoPositivePairs,
  NoTriplets,
  EmptyFeatureMap,
  InsufficientIdentities,
  InsufficientImages,
  DivergenceDetected,
  SingleClassInput,
  EmptyTemplate,
  AllPairsRejected,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::MetricSigmaModeMismatch: return "MetricSigmaModeMismatch";
    case ErrorCode::AllocationFailure: return "AllocationFailure";
    case ErrorCode::NoPositivePairs: return "NoPositivePairs";
    case ErrorCode::NoTriplets: return "NoTriplets";
    case ErrorCode::EmptyFeatureMap: return "EmptyFeatureMap";
    case ErrorCode::InsufficientIdentities: return "InsufficientIdentities";
    case ErrorCode::InsufficientImages: return "InsufficientImages";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::SingleClassInput: return "SingleClassInput";
    case ErrorCode::EmptyTemplate: return "EmptyTemplate";
    case ErrorCode::AllPairsRejected: return "AllPairsRejected";
  }
  return "Unknown";
}

}  // namespace probembed
