#include "tdcosim/der/der.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tdcosim::der
{
    double droop_response(double f_hz, double db_uf, double db_of, double d_dn)
    {
        const double low = kNominalHz - db_uf;
        const double high = kNominalHz + db_of;
        if (f_hz < low)
        {
            return (low - f_hz) / kNominalHz * d_dn;
        }
        if (f_hz > high)
        {
            // Opposes the deviation: over-frequency reduces output.
            return -(f_hz - high) / kNominalHz * d_dn;
        }
        return 0.0;
    }

    double command_limit(const DerState &der)
    {
        const double requested = der.p_ref + der.p_drp + der.p_ext;
        const double limit = std::min({requested, der.p_mppt, der.p_caps, der.p_ref + der.p_headroom});
        return std::max(0.0, limit);
    }

    DerState step_der(DerState der, double p_cmd, double dt)
    {
        if (!(der.tg > 0.0))
        {
            throw DerError(fmt::format("DER '{}': tracking time constant must be > 0", der.id));
        }
        der.p_out += dt / der.tg * (p_cmd - der.p_out);
        der.p_out = std::clamp(der.p_out, 0.0, std::min(der.p_mppt, der.p_caps));
        return der;
    }

    MpptSeries::MpptSeries(std::vector<double> times, std::vector<double> values)
        : times_(std::move(times)), values_(std::move(values))
    {
        if (times_.empty() || times_.size() != values_.size())
        {
            throw DerError("MPPT series needs matching, non-empty time and value columns");
        }
        for (std::size_t i = 1; i < times_.size(); ++i)
        {
            if (!(times_[i] > times_[i - 1]))
            {
                throw DerError(fmt::format("MPPT series times must increase (row {})", i + 1));
            }
        }
        for (double v : values_)
        {
            if (!(v >= 0.0) || !std::isfinite(v))
            {
                throw DerError("MPPT series values must be finite and non-negative");
            }
        }
    }

    MpptSeries MpptSeries::constant(double mw, double duration)
    {
        return MpptSeries({0.0, std::max(duration, 1.0)}, {mw, mw});
    }

    MpptSeries MpptSeries::from_csv(const std::filesystem::path &path)
    {
        std::ifstream in(path);
        if (!in)
        {
            throw DerError("cannot open MPPT series " + path.string());
        }
        std::vector<double> t, v;
        std::string line;
        std::size_t row = 0;
        while (std::getline(in, line))
        {
            ++row;
            if (line.empty() || line[0] == '#')
            {
                continue;
            }
            std::replace(line.begin(), line.end(), ',', ' ');
            std::istringstream fields(line);
            double a = 0.0, b = 0.0;
            if (!(fields >> a >> b))
            {
                if (t.empty())
                {
                    continue; // header
                }
                throw DerError(fmt::format("{}:{}: expected 't_seconds,mw'", path.string(), row));
            }
            t.push_back(a);
            v.push_back(b);
        }
        return MpptSeries(std::move(t), std::move(v));
    }

    double MpptSeries::end() const
    {
        if (times_.size() < 2)
        {
            return times_.front();
        }
        return times_.back() + (times_.back() - times_[times_.size() - 2]);
    }

    double MpptSeries::sample(double t) const
    {
        constexpr double eps = 1e-9;
        if (times_.empty())
        {
            throw DerError("MPPT series is empty");
        }
        if (t < times_.front() - eps || t > end() + eps)
        {
            throw DerError(fmt::format("MPPT sample time {} s outside series range [{}, {}]", t, times_.front(), end()));
        }
        auto it = std::upper_bound(times_.begin(), times_.end(), t + eps);
        const auto idx = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - times_.begin()) - 1));
        return values_[idx];
    }
} // namespace tdcosim::der
