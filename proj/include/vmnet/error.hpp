#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vmnet {

/// Every failure raised by the library carries one of these codes so callers
/// (the CLI in particular) can branch on the kind of failure without parsing
/// messages.
enum class ErrorCode {
  InvalidArgument,
  MalformedHeader,
  UnsupportedEncoding,
  EmptyAudio,
  ClipTooShort,
  TooManyBands,
  TooFewFrames,
  RankDeficient,
  NonFiniteInput,
  DimMismatch,
  ShapeMismatch,
  EmptyCorpus,
  NonFiniteActivation,
  NonFiniteLoss,
  StaleCache,
  CorruptCheckpoint,
  CorruptFile,
  DuplicatePairId,
  MissingFile,
  SchemaError,
  BatchTooLarge,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedEncoding: return "UnsupportedEncoding";
    case ErrorCode::EmptyAudio: return "EmptyAudio";
    case ErrorCode::ClipTooShort: return "ClipTooShort";
    case ErrorCode::TooManyBands: return "TooManyBands";
    case ErrorCode::TooFewFrames: return "TooFewFrames";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::DuplicatePairId: return "DuplicatePairId";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::BatchTooLarge: return "BatchTooLarge";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace vmnet
