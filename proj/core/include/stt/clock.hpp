#pragma once

#include <functional>
#include <string>

namespace stt {

/// Source of event timestamps (ISO-8601 UTC strings). Injected so replays can pin time.
using Clock = std::function<std::string()>;

Clock system_clock();

/// Always returns `stamp`. Useful for byte-identical transcripts in tests.
Clock fixed_clock(std::string stamp);

}  // namespace stt
