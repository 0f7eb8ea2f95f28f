#include "stt/clock.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>

namespace stt {

Clock system_clock() {
  return [] {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::system_clock::to_time_t(now);
    const auto millis =
        std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm utc{};
    gmtime_r(&secs, &utc);
    char date[24];
    std::strftime(date, sizeof(date), "%Y-%m-%dT%H:%M:%S", &utc);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%s.%03dZ", date, static_cast<int>(millis));
    return std::string(buf);
  };
}

Clock fixed_clock(std::string stamp) {
  return [stamp = std::move(stamp)] { return stamp; };
}

}  // namespace stt
