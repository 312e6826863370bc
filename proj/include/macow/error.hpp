#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace macow {

enum class ErrorCode {
  kDimension = 1,
  kValidation,
  kInvertibility,
  kNumeric,
  kIo,
  kChecksum,
  kVersion,
  kConfig,
  kUsage,
  kState,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

// Diagnostics go to stderr unless silenced; tests silence them.
void warn(std::string_view message);
void set_warnings_enabled(bool enabled);
bool warnings_enabled();

}  // namespace macow
