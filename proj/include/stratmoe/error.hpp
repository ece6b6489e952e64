#pragma once

#include <stdexcept>
#include <string>

namespace stratmoe {

/// Shape or length disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Precondition violated by a value (negative threshold, unsorted menu, ...).
class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FormatErrorKind {
  kIo,
  kBadMagic,
  kBadVersion,
  kTruncated,
  kNonFinite,
  kDanglingDomainId,
  kDimensionMismatch,
  kTrailingBytes,
};

const char* to_string(FormatErrorKind kind);

/// Failure reading or validating an on-disk dataset or checkpoint.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

inline const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kIo: return "io error";
    case FormatErrorKind::kBadMagic: return "bad magic";
    case FormatErrorKind::kBadVersion: return "bad version";
    case FormatErrorKind::kTruncated: return "truncated";
    case FormatErrorKind::kNonFinite: return "non-finite value";
    case FormatErrorKind::kDanglingDomainId: return "dangling domain id";
    case FormatErrorKind::kDimensionMismatch: return "dimension mismatch";
    case FormatErrorKind::kTrailingBytes: return "trailing bytes";
  }
  return "unknown";
}

}  // namespace stratmoe
