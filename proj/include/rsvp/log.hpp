#pragma once

#include <spdlog/spdlog.h>

namespace rsvp {

// Process-wide stderr logger. Level comes from RSVP_LOG_LEVEL
// (trace|debug|info|warn|error|off) and defaults to `fallback` otherwise.
spdlog::logger& logger();
void init_logging(spdlog::level::level_enum fallback = spdlog::level::warn);

}  // namespace rsvp
