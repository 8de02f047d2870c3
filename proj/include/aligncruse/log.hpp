// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>
#include <string_view>

namespace acrs::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

void set_level(Level level);
Level level();
Level parse_level(std::string_view name);

// Writes one structured JSON record per line to stderr.
void write(Level level, std::string_view event, std::string_view message);

inline void debug(std::string_view event, std::string_view msg) { write(Level::kDebug, event, msg); }
inline void info(std::string_view event, std::string_view msg) { write(Level::kInfo, event, msg); }
inline void warn(std::string_view event, std::string_view msg) { write(Level::kWarn, event, msg); }
inline void error(std::string_view event, std::string_view msg) { write(Level::kError, event, msg); }

}  // namespace acrs::log
