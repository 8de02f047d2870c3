// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/log.hpp"

#include <atomic>
#include <iostream>

#include <json.hpp>

#include "aligncruse/error.hpp"

namespace acrs {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kNoSignal: return "no_signal";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

namespace log {
namespace {
std::atomic<Level> g_level{Level::kWarn};

const char* name(Level level) {
  switch (level) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warn";
    case Level::kError: return "error";
    case Level::kOff: return "off";
  }
  return "?";
}
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

Level parse_level(std::string_view s) {
  if (s == "debug") return Level::kDebug;
  if (s == "info") return Level::kInfo;
  if (s == "warn") return Level::kWarn;
  if (s == "error") return Level::kError;
  if (s == "off") return Level::kOff;
  fail(ErrorKind::kConfig, "unknown log level: " + std::string(s));
}

void write(Level lvl, std::string_view event, std::string_view message) {
  if (lvl < g_level.load() || g_level.load() == Level::kOff) return;
  nlohmann::json rec = {{"level", name(lvl)},
                        {"event", std::string(event)},
                        {"msg", std::string(message)}};
  std::cerr << rec.dump() << '\n';
}

}  // namespace log
}  // namespace acrs
