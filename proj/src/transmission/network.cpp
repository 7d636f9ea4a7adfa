#include "network.hpp"

#include <cmath>

namespace tdcosim::transmission::detail
{
    Eigen::MatrixXcd build_ybus(const Grid &grid)
    {
        const auto n = static_cast<Eigen::Index>(grid.buses.size());
        Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
        for (const auto &br : grid.branches)
        {
            if (!br.in_service)
            {
                continue;
            }
            const auto f = static_cast<Eigen::Index>(grid.bus_index(br.from));
            const auto t = static_cast<Eigen::Index>(grid.bus_index(br.to));
            const Complex ys = 1.0 / Complex(br.r, br.x);
            const Complex ysh(0.0, 0.5 * br.b);
            const double tap = br.tap;
            y(f, f) += (ys + ysh) / (tap * tap);
            y(t, t) += ys + ysh;
            y(f, t) -= ys / tap;
            y(t, f) -= ys / tap;
        }
        for (Eigen::Index i = 0; i < n; ++i)
        {
            const auto &b = grid.buses[static_cast<std::size_t>(i)];
            y(i, i) += Complex(b.shunt_g, b.shunt_b);
        }
        return y;
    }

    void injections(const Eigen::MatrixXd &G, const Eigen::MatrixXd &B, const Eigen::VectorXd &vm,
                    const Eigen::VectorXd &va, Eigen::VectorXd &p, Eigen::VectorXd &q)
    {
        const auto n = vm.size();
        p.setZero(n);
        q.setZero(n);
        for (Eigen::Index i = 0; i < n; ++i)
        {
            double pi = 0.0;
            double qi = 0.0;
            for (Eigen::Index j = 0; j < n; ++j)
            {
                const double g = G(i, j);
                const double b = B(i, j);
                if (g == 0.0 && b == 0.0)
                {
                    continue;
                }
                const double th = va[i] - va[j];
                const double c = std::cos(th);
                const double s = std::sin(th);
                pi += vm[j] * (g * c + b * s);
                qi += vm[j] * (g * s - b * c);
            }
            p[i] = vm[i] * pi;
            q[i] = vm[i] * qi;
        }
    }

    void injection_jacobian(const Eigen::MatrixXd &G, const Eigen::MatrixXd &B, const Eigen::VectorXd &vm,
                            const Eigen::VectorXd &va, const Eigen::VectorXd &p, const Eigen::VectorXd &q,
                            Eigen::MatrixXd &dp_da, Eigen::MatrixXd &dp_dv, Eigen::MatrixXd &dq_da,
                            Eigen::MatrixXd &dq_dv)
    {
        const auto n = vm.size();
        dp_da.setZero(n, n);
        dp_dv.setZero(n, n);
        dq_da.setZero(n, n);
        dq_dv.setZero(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
        {
            for (Eigen::Index j = 0; j < n; ++j)
            {
                if (i == j)
                {
                    continue;
                }
                const double g = G(i, j);
                const double b = B(i, j);
                if (g == 0.0 && b == 0.0)
                {
                    continue;
                }
                const double th = va[i] - va[j];
                const double c = std::cos(th);
                const double s = std::sin(th);
                dp_da(i, j) = vm[i] * vm[j] * (g * s - b * c);
                dp_dv(i, j) = vm[i] * (g * c + b * s);
                dq_da(i, j) = -vm[i] * vm[j] * (g * c + b * s);
                dq_dv(i, j) = vm[i] * (g * s - b * c);
            }
            const double gii = G(i, i);
            const double bii = B(i, i);
            dp_da(i, i) = -q[i] - bii * vm[i] * vm[i];
            dp_dv(i, i) = p[i] / vm[i] + gii * vm[i];
            dq_da(i, i) = p[i] - gii * vm[i] * vm[i];
            dq_dv(i, i) = q[i] / vm[i] - bii * vm[i];
        }
    }
} // namespace tdcosim::transmission::detail
