#pragma once

#include <stdexcept>
#include <string>

namespace patternid {

// Every failure surfaced by the library derives from Error. The category maps
// onto the CLI exit codes: config -> 2, data -> 3, runtime -> 4.
enum class ErrorCategory { kConfig, kData, kRuntime };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::kData, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorCategory::kRuntime, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::kRuntime, what) {}
};

class GenerationError : public Error {
 public:
  explicit GenerationError(const std::string& what) : Error(ErrorCategory::kData, what) {}
};

class RenderError : public Error {
 public:
  explicit RenderError(const std::string& what) : Error(ErrorCategory::kData, what) {}
};

class MiningError : public Error {
 public:
  explicit MiningError(const std::string& what) : Error(ErrorCategory::kRuntime, what) {}
};

/// Container (checkpoint / database) parse failure; carries the byte offset.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(ErrorCategory::kData, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class FingerprintMismatch : public Error {
 public:
  explicit FingerprintMismatch(const std::string& what) : Error(ErrorCategory::kData, what) {}
};

class TrainingAborted : public Error {
 public:
  explicit TrainingAborted(const std::string& what) : Error(ErrorCategory::kRuntime, what) {}
};

}  // namespace patternid
