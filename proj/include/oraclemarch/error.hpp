// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace oraclemarch {

enum class ErrorCode {
  InvalidArgument,
  InvalidViewCell,
  OriginOutsideSphere,
  PixelOutOfBounds,
  InvalidCount,
  OutOfRange,
  BehindAverageCamera,
  DegeneratePDF,
  InvalidKernel,
  ShapeMismatch,
  MissingCache,
  PoseOutsideViewCell,
  IoError,
  DatasetMissingDepth,
  IncompatibleCheckpoint,
  VersionMismatch,
  CorruptFile,
  EmptySplit,
  BindError,
  MalformedMessage,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidViewCell: return "InvalidViewCell";
    case ErrorCode::OriginOutsideSphere: return "OriginOutsideSphere";
    case ErrorCode::PixelOutOfBounds: return "PixelOutOfBounds";
    case ErrorCode::InvalidCount: return "InvalidCount";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::BehindAverageCamera: return "BehindAverageCamera";
    case ErrorCode::DegeneratePDF: return "DegeneratePDF";
    case ErrorCode::InvalidKernel: return "InvalidKernel";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingCache: return "MissingCache";
    case ErrorCode::PoseOutsideViewCell: return "PoseOutsideViewCell";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DatasetMissingDepth: return "DatasetMissingDepth";
    case ErrorCode::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::BindError: return "BindError";
    case ErrorCode::MalformedMessage: return "MalformedMessage";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception; `code()` is stable
/// and is what the CLI prints as the machine-parseable part of an error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace oraclemarch
