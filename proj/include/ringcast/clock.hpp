#pragma once

#include <chrono>
#include <cstdint>

namespace ringcast {

inline std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

/// Burns CPU for `ns` nanoseconds of wall time. Used for post cost and for
/// injected application delays, which must occupy the calling thread.
inline void busy_wait_ns(std::int64_t ns) {
  if (ns <= 0) return;
  const std::int64_t until = now_ns() + ns;
  while (now_ns() < until) {
  }
}

}  // namespace ringcast
