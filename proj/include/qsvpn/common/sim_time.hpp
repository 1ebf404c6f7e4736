#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>

namespace qsvpn {

// Simulated time since scenario start. One tick (1 us) is the scheduler quantum.
using SimTime = std::chrono::microseconds;
using SimDuration = std::chrono::microseconds;

inline constexpr SimDuration kQuantum{1};

inline SimDuration from_ms(double ms) {
  return SimDuration(static_cast<std::int64_t>(std::llround(ms * 1000.0)));
}
inline SimDuration from_s(double s) { return from_ms(s * 1000.0); }
inline double to_ms(SimDuration d) { return static_cast<double>(d.count()) / 1000.0; }
inline double to_s(SimDuration d) { return static_cast<double>(d.count()) / 1e6; }

// Fixed three-decimal millisecond rendering (exact for microsecond ticks).
std::string format_ms(SimDuration d);

}  // namespace qsvpn
