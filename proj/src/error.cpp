#include "macow/error.hpp"

#include <atomic>
#include <iostream>

namespace macow {

namespace {
std::atomic<bool> g_warnings{true};
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kInvertibility: return "invertibility";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kChecksum: return "checksum";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kState: return "state";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, std::string(to_string(code)) + " error: " + message);
}

void warn(std::string_view message) {
  if (g_warnings.load(std::memory_order_relaxed)) std::cerr << "warning: " << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled, std::memory_order_relaxed); }

bool warnings_enabled() { return g_warnings.load(std::memory_order_relaxed); }

}  // namespace macow
