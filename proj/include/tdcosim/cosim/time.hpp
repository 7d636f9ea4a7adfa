#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>

namespace tdcosim::cosim
{
    /// Simulation time on an integer nanosecond grid. All kernel comparisons are exact.
    using Time = std::chrono::duration<std::int64_t, std::nano>;

    inline constexpr Time kTimeZero{0};
    inline constexpr Time kTimeMax{INT64_MAX};

    inline Time from_seconds(double s)
    {
        return Time{static_cast<std::int64_t>(std::llround(s * 1e9))};
    }

    inline constexpr double to_seconds(Time t)
    {
        return static_cast<double>(t.count()) / 1e9;
    }

    /// True when `t` lies on the grid k * period, k integer.
    inline constexpr bool on_grid(Time t, Time period)
    {
        return period.count() > 0 && t.count() % period.count() == 0;
    }
} // namespace tdcosim::cosim
