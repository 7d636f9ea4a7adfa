#pragma once

#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdcosim::der
{
    inline constexpr double kNominalHz = 60.0;

    class DerError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    /// One distributed PV plant. Powers in MW, frequencies in Hz.
    struct DerState
    {
        std::string id;
        std::string feeder;
        std::string node;

        double p_ref = 0.0;   // dispatched reference, constant over a run
        double p_drp = 0.0;   // droop (primary) component
        double p_ext = 0.0;   // AGC (secondary) component
        double p_mppt = 0.0;  // available power from the irradiance series
        double p_caps = 0.0;  // nameplate
        double p_headroom = std::numeric_limits<double>::infinity(); // feeder voltage/thermal limit above p_ref
        double p_out = 0.0;   // actual output

        double tg = 0.1;      // command tracking time constant, s
        double d_dn = 20.0;   // droop gain, pu power per pu frequency
        double db_uf = 0.017; // under-frequency deadband, Hz
        double db_of = 0.017; // over-frequency deadband, Hz
    };

    /// Droop increment in pu of nameplate. Positive below 60 - db_uf, negative above 60 + db_of.
    double droop_response(double f_hz, double db_uf, double db_of, double d_dn);

    /// max(0, min(p_ref + p_drp + p_ext, p_mppt, p_caps, p_ref + p_headroom)).
    double command_limit(const DerState &der);

    /// One forward-Euler step of the first-order lag toward p_cmd, clamped to [0, min(p_mppt, p_caps)].
    DerState step_der(DerState der, double p_cmd, double dt);

    /// Zero-order-hold time series (t_seconds, mw) with strictly increasing times.
    class MpptSeries
    {
    public:
        MpptSeries() = default;
        MpptSeries(std::vector<double> times, std::vector<double> values);

        static MpptSeries constant(double mw, double duration);
        static MpptSeries from_csv(const std::filesystem::path &path);

        /// Last sample at or before t. Throws DerError for t before the first sample or past the covered span.
        double sample(double t) const;

        double start() const { return times_.front(); }
        /// End of coverage: the last sample is held for one more sample period.
        double end() const;
        bool empty() const { return times_.empty(); }
        const std::vector<double> &times() const { return times_; }
        const std::vector<double> &values() const { return values_; }

    private:
        std::vector<double> times_;
        std::vector<double> values_;
    };

    inline double sample_mppt(const MpptSeries &series, double t)
    {
        return series.sample(t);
    }
} // namespace tdcosim::der
