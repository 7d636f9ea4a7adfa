#include "network_dae.hpp"

#include "network.hpp"

#include <algorithm>
#include <cmath>

namespace tdcosim::transmission
{
    VectorXd NetworkDae::mass() const
    {
        VectorXd m(state_count());
        for (std::size_t i = 0; i < gens.size(); ++i)
        {
            const auto s = static_cast<Eigen::Index>(3 * i);
            m[s] = 1.0;
            m[s + 1] = 2.0 * gens[i].h;
            m[s + 2] = gens[i].tg;
        }
        return m;
    }

    double NetworkDae::electrical_power(const GenSlot &gen, double delta, const VectorXd &y) const
    {
        const double th = y[gen.bus];
        const double v = y[bus_count() + gen.bus];
        return gen.e * v * std::sin(delta - th) / gen.xd;
    }

    double NetworkDae::governor_command(const GenSlot &gen, double omega, bool *clamped) const
    {
        double cmd = gen.pref + gen.pext;
        if (gen.governor)
        {
            cmd -= (omega - 1.0) / gen.r;
        }
        const double out = std::clamp(cmd, gen.pmin, gen.pmax);
        if (clamped)
        {
            *clamped = out != cmd;
        }
        return out;
    }

    void NetworkDae::residual(const VectorXd &x, const VectorXd &y, VectorXd &f, VectorXd &g) const
    {
        const Eigen::Index nb = bus_count();
        const VectorXd th = y.head(nb);
        const VectorXd vm = y.tail(nb);
        VectorXd p, q;
        detail::injections(G, B, vm, th, p, q);
        g.head(nb) = p + pl - pder;
        g.tail(nb) = q + ql;

        for (std::size_t i = 0; i < gens.size(); ++i)
        {
            const GenSlot &gen = gens[i];
            const auto s = static_cast<Eigen::Index>(3 * i);
            const double delta = x[s];
            const double omega = x[s + 1];
            const double pm = x[s + 2];
            const double a = delta - th[gen.bus];
            const double v = vm[gen.bus];
            const double pe = gen.e * v * std::sin(a) / gen.xd;
            const double qg = (gen.e * v * std::cos(a) - v * v) / gen.xd;

            f[s] = ws * (omega - 1.0);
            f[s + 1] = pm - pe - gen.d * (omega - 1.0);
            f[s + 2] = governor_command(gen, omega) - pm;

            g[gen.bus] -= pe;
            g[nb + gen.bus] -= qg;
        }
    }

    void NetworkDae::jacobian(const VectorXd &x, const VectorXd &y, MatrixXd &fx, MatrixXd &fy, MatrixXd &gx,
                              MatrixXd &gy) const
    {
        const Eigen::Index nb = bus_count();
        const VectorXd th = y.head(nb);
        const VectorXd vm = y.tail(nb);
        VectorXd p, q;
        MatrixXd dp_da, dp_dv, dq_da, dq_dv;
        detail::injections(G, B, vm, th, p, q);
        detail::injection_jacobian(G, B, vm, th, p, q, dp_da, dp_dv, dq_da, dq_dv);
        gy.topLeftCorner(nb, nb) = dp_da;
        gy.topRightCorner(nb, nb) = dp_dv;
        gy.bottomLeftCorner(nb, nb) = dq_da;
        gy.bottomRightCorner(nb, nb) = dq_dv;

        for (std::size_t i = 0; i < gens.size(); ++i)
        {
            const GenSlot &gen = gens[i];
            const auto s = static_cast<Eigen::Index>(3 * i);
            const Eigen::Index k = gen.bus;
            const double a = x[s] - th[k];
            const double v = vm[k];
            const double ev_cos = gen.e * v * std::cos(a) / gen.xd;
            const double ev_sin = gen.e * v * std::sin(a) / gen.xd;
            const double e_sin = gen.e * std::sin(a) / gen.xd;
            const double dqg_dv = (gen.e * std::cos(a) - 2.0 * v) / gen.xd;

            fx(s, s + 1) = ws;

            fx(s + 1, s) = -ev_cos;
            fx(s + 1, s + 1) = -gen.d;
            fx(s + 1, s + 2) = 1.0;
            fy(s + 1, k) = ev_cos;
            fy(s + 1, nb + k) = -e_sin;

            bool clamped = false;
            governor_command(gen, x[s + 1], &clamped);
            if (gen.governor && !clamped)
            {
                fx(s + 2, s + 1) = -1.0 / gen.r;
            }
            fx(s + 2, s + 2) = -1.0;

            // dPe/d(delta, theta, V) = (ev_cos, -ev_cos, e_sin); dQg = (-ev_sin, ev_sin, dqg_dv)
            gx(k, s) -= ev_cos;
            gy(k, k) += ev_cos;
            gy(k, nb + k) -= e_sin;
            gx(nb + k, s) += ev_sin;
            gy(nb + k, k) -= ev_sin;
            gy(nb + k, nb + k) -= dqg_dv;
        }
    }
} // namespace tdcosim::transmission
