#include "tdcosim/agc/agc.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace tdcosim::agc
{
    void AgcAreaState::validate() const
    {
        if (!(bias > 0.0))
        {
            throw AgcError("AGC frequency bias must be > 0");
        }
        if (!(deadband >= 0.0))
        {
            throw AgcError("AGC deadband must be >= 0");
        }
        if (kp < 0.0 || ki < 0.0)
        {
            throw AgcError("AGC gains must be >= 0");
        }
        if (!(measurement_period > 0.0) || !(signal_period > 0.0))
        {
            throw AgcError("AGC periods must be > 0");
        }
        const double ratio = signal_period / measurement_period;
        if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1.0)
        {
            throw AgcError(fmt::format("AGC signal period {} s is not a multiple of the measurement period {} s",
                                       signal_period, measurement_period));
        }
    }

    std::int64_t AgcAreaState::hold_ratio() const
    {
        return std::max<std::int64_t>(1, std::llround(signal_period / measurement_period));
    }

    double compute_ace(double f_meas, const AgcAreaState &area)
    {
        const double df = f_meas - area.f0;
        if (std::abs(df) <= area.deadband)
        {
            return 0.0;
        }
        return -10.0 * area.bias * df;
    }

    double pi_update(AgcAreaState &area, double ace, double dt)
    {
        area.integral += ace * dt;
        if (area.ki > 0.0 && std::isfinite(area.headroom))
        {
            const double bound = area.headroom / area.ki;
            area.integral = std::clamp(area.integral, -bound, bound);
        }
        area.last_ace = ace;
        ++area.updates;
        if (signal_updated(area))
        {
            area.last_signal = area.kp * ace + area.ki * area.integral;
        }
        return area.last_signal;
    }

    bool signal_updated(const AgcAreaState &area)
    {
        return area.updates > 0 && area.updates % area.hold_ratio() == 0;
    }

    void ParticipationTable::validate() const
    {
        if (entries.empty())
        {
            throw AgcError("participation table is empty");
        }
        std::set<std::string> seen;
        double sum = 0.0;
        for (const auto &[unit, beta] : entries)
        {
            if (!seen.insert(unit).second)
            {
                throw AgcError(fmt::format("participation table lists '{}' twice", unit));
            }
            if (!(beta >= 0.0))
            {
                throw AgcError(fmt::format("participation factor of '{}' must be >= 0", unit));
            }
            sum += beta;
        }
        if (std::abs(sum - 1.0) > 1e-9)
        {
            throw AgcError(fmt::format("participation factors sum to {:.9f}, expected 1", sum));
        }
    }

    double ParticipationTable::beta(const std::string &unit) const
    {
        for (const auto &[id, b] : entries)
        {
            if (id == unit)
            {
                return b;
            }
        }
        throw AgcError(fmt::format("unit '{}' is not in the participation table", unit));
    }

    std::vector<std::pair<std::string, double>> dispatch_participation(double signal, const ParticipationTable &table)
    {
        if (table.entries.empty())
        {
            throw AgcError("participation table is empty");
        }
        std::vector<std::pair<std::string, double>> out;
        out.reserve(table.entries.size());
        for (const auto &[unit, beta] : table.entries)
        {
            out.emplace_back(unit, beta * signal);
        }
        return out;
    }
} // namespace tdcosim::agc
