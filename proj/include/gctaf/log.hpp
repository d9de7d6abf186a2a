#pragma once

namespace gctaf {

// Stderr logger gated by the GCTAF_LOG environment variable
// (error | info | debug, default info).
enum class LogLevel : int { error = 0, info = 1, debug = 2 };

LogLevel log_level();

void log_error(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void log_info(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void log_debug(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

}  // namespace gctaf
