#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace blocksim {

// Virtual time in integer microseconds. All durations derived from the cost
// model are rounded half-up before they enter the event queue so that replay
// order never depends on floating-point tie behavior.
using SimTime = std::int64_t;

constexpr SimTime kUsPerMs = 1000;
constexpr SimTime kUsPerSec = 1000 * 1000;

inline SimTime us_from_ms(double ms) { return static_cast<SimTime>(std::llround(ms * 1000.0)); }
inline SimTime us_from_s(double s) { return static_cast<SimTime>(std::llround(s * 1e6)); }
inline double s_from_us(SimTime us) { return static_cast<double>(us) / 1e6; }

// Round half-up to integer microseconds; durations must be non-negative.
inline SimTime round_us(double us) {
    if (us < 0.0) throw std::invalid_argument("negative duration");
    return static_cast<SimTime>(std::llround(us));
}

}  // namespace blocksim
