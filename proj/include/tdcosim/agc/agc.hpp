#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tdcosim::agc
{
    class AgcError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    struct AgcAreaState
    {
        double bias = 20.0;      // B, MW per 0.1 Hz
        double f0 = 60.0;        // Hz
        double deadband = 0.017; // Hz
        double kp = 0.1;
        double ki = 0.15;
        double signal_period = 4.0;      // s
        double measurement_period = 0.5; // s
        // Anti-windup bound on the integral contribution, MW.
        double headroom = std::numeric_limits<double>::infinity();

        double integral = 0.0;    // MW s
        double last_ace = 0.0;    // MW
        double last_signal = 0.0; // MW, held between signal updates
        std::int64_t updates = 0; // pi_update calls so far

        /// Throws AgcError when B <= 0, deadband < 0 or the periods do not nest.
        void validate() const;
        std::int64_t hold_ratio() const;
    };

    /// Eq. form ACE = -10 B (f - f0), zero inside the deadband. Positive means raise generation.
    double compute_ace(double f_meas, const AgcAreaState &area);

    /// Integrates ace over dt and returns the area signal, refreshed only on the signal grid.
    double pi_update(AgcAreaState &area, double ace, double dt);

    /// True when the last pi_update landed on the signal grid.
    bool signal_updated(const AgcAreaState &area);

    /// Ordered unit id -> beta. Entries must be non-negative and sum to one.
    struct ParticipationTable
    {
        std::vector<std::pair<std::string, double>> entries;

        void validate() const;
        double beta(const std::string &unit) const;
    };

    std::vector<std::pair<std::string, double>> dispatch_participation(double signal,
                                                                       const ParticipationTable &table);
} // namespace tdcosim::agc
