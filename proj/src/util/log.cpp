#include "rsvp/log.hpp"

#include <cstdlib>

#include <spdlog/sinks/stdout_sinks.h>

namespace rsvp {

namespace {

std::shared_ptr<spdlog::logger> make_logger() {
  auto l = std::make_shared<spdlog::logger>("rsvp", std::make_shared<spdlog::sinks::stderr_sink_mt>());
  l->set_pattern("[%H:%M:%S] [%l] %v");
  return l;
}

spdlog::logger& instance() {
  static const auto l = [] {
    auto p = make_logger();
    p->set_level(spdlog::level::warn);
    if (const char* env = std::getenv("RSVP_LOG_LEVEL")) p->set_level(spdlog::level::from_str(env));
    return p;
  }();
  return *l;
}

}  // namespace

spdlog::logger& logger() { return instance(); }

void init_logging(spdlog::level::level_enum fallback) {
  const char* env = std::getenv("RSVP_LOG_LEVEL");
  instance().set_level(env ? spdlog::level::from_str(env) : fallback);
}

}  // namespace rsvp
