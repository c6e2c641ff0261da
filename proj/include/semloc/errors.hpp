#pragma once

#include <stdexcept>
#include <string>

namespace semloc {

/// Error categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  kBehindCamera = 10,
  kGimbalLock,
  kOutOfBounds,
  kParse,
  kValidation,
  kInvalidSpec,
  kInsufficientSeparation,
  kEmptyMapNeighborhood,
  kNoVisiblePoints,
  kAllCandidatesInvalid,
  kNonMonotonicFrameId,
  kNoAssociations,
  kConfig,
  kSequenceNotFound,
  kInitializationFailed,
  kIo,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kBehindCamera: return "BehindCamera";
    case ErrorKind::kGimbalLock: return "GimbalLock";
    case ErrorKind::kOutOfBounds: return "OutOfBounds";
    case ErrorKind::kParse: return "ParseError";
    case ErrorKind::kValidation: return "ValidationError";
    case ErrorKind::kInvalidSpec: return "InvalidSpec";
    case ErrorKind::kInsufficientSeparation: return "InsufficientSeparation";
    case ErrorKind::kEmptyMapNeighborhood: return "EmptyMapNeighborhood";
    case ErrorKind::kNoVisiblePoints: return "NoVisiblePoints";
    case ErrorKind::kAllCandidatesInvalid: return "AllCandidatesInvalid";
    case ErrorKind::kNonMonotonicFrameId: return "NonMonotonicFrameId";
    case ErrorKind::kNoAssociations: return "NoAssociations";
    case ErrorKind::kConfig: return "ConfigError";
    case ErrorKind::kSequenceNotFound: return "SequenceNotFound";
    case ErrorKind::kInitializationFailed: return "InitializationFailed";
    case ErrorKind::kIo: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace semloc
