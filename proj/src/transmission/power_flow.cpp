#include "tdcosim/transmission/power_flow.hpp"

#include "network.hpp"

#include <fmt/format.h>

#include <cmath>
#include <queue>

namespace tdcosim::transmission
{
    namespace
    {
        void check_connected(const Grid &grid, std::size_t slack)
        {
            const std::size_t n = grid.buses.size();
            std::vector<std::vector<std::size_t>> adj(n);
            for (const auto &br : grid.branches)
            {
                if (!br.in_service)
                {
                    continue;
                }
                const auto f = grid.bus_index(br.from);
                const auto t = grid.bus_index(br.to);
                adj[f].push_back(t);
                adj[t].push_back(f);
            }
            std::vector<bool> seen(n, false);
            std::queue<std::size_t> q;
            q.push(slack);
            seen[slack] = true;
            while (!q.empty())
            {
                const auto i = q.front();
                q.pop();
                for (auto j : adj[i])
                {
                    if (!seen[j])
                    {
                        seen[j] = true;
                        q.push(j);
                    }
                }
            }
            for (std::size_t i = 0; i < n; ++i)
            {
                if (!seen[i])
                {
                    throw GridError(GridError::Code::Islanded,
                                    fmt::format("bus {} is islanded from the slack bus", grid.buses[i].id));
                }
            }
        }
    } // namespace

    PowerFlowResult solve_power_flow(const Grid &grid, const PowerFlowOptions &options)
    {
        grid.validate();
        const std::size_t n = grid.buses.size();
        const auto ni = static_cast<Eigen::Index>(n);

        std::size_t slack = 0;
        std::vector<BusType> kind(n);
        Eigen::VectorXd p_spec = Eigen::VectorXd::Zero(ni);
        Eigen::VectorXd q_spec = Eigen::VectorXd::Zero(ni);
        Eigen::VectorXd vm = Eigen::VectorXd::Ones(ni);
        Eigen::VectorXd va = Eigen::VectorXd::Zero(ni);
        std::vector<bool> has_gen(n, false);
        for (const auto &g : grid.generators)
        {
            if (!g.online)
            {
                continue;
            }
            const auto i = grid.bus_index(g.bus);
            has_gen[i] = true;
            p_spec[static_cast<Eigen::Index>(i)] += g.p_set;
        }
        for (std::size_t i = 0; i < n; ++i)
        {
            const auto &b = grid.buses[i];
            const auto ii = static_cast<Eigen::Index>(i);
            kind[i] = b.type;
            if (b.type == BusType::PV && !has_gen[i])
            {
                kind[i] = BusType::PQ;
            }
            if (b.type == BusType::Slack)
            {
                slack = i;
            }
            if (kind[i] != BusType::PQ)
            {
                vm[ii] = b.v_set;
            }
            p_spec[ii] -= b.load_p + b.boundary_p - b.der_p;
            q_spec[ii] -= b.load_q + b.boundary_q;
        }
        check_connected(grid, slack);

        const Eigen::MatrixXcd y = detail::build_ybus(grid);
        const Eigen::MatrixXd G = y.real();
        const Eigen::MatrixXd B = y.imag();

        // Unknown ordering: angles of non-slack buses, then magnitudes of PQ buses.
        std::vector<Eigen::Index> ang_idx;
        std::vector<Eigen::Index> mag_idx;
        for (std::size_t i = 0; i < n; ++i)
        {
            if (kind[i] != BusType::Slack)
            {
                ang_idx.push_back(static_cast<Eigen::Index>(i));
            }
            if (kind[i] == BusType::PQ)
            {
                mag_idx.push_back(static_cast<Eigen::Index>(i));
            }
        }
        const auto na = static_cast<Eigen::Index>(ang_idx.size());
        const auto nm = static_cast<Eigen::Index>(mag_idx.size());

        Eigen::VectorXd p, q;
        Eigen::MatrixXd dp_da, dp_dv, dq_da, dq_dv;
        Eigen::VectorXd mismatch(na + nm);
        Eigen::MatrixXd jac(na + nm, na + nm);

        PowerFlowResult result;
        double worst = 0.0;
        Eigen::Index worst_row = 0;
        for (int it = 0; it <= options.max_iterations; ++it)
        {
            detail::injections(G, B, vm, va, p, q);
            for (Eigen::Index k = 0; k < na; ++k)
            {
                mismatch[k] = p_spec[ang_idx[k]] - p[ang_idx[k]];
            }
            for (Eigen::Index k = 0; k < nm; ++k)
            {
                mismatch[na + k] = q_spec[mag_idx[k]] - q[mag_idx[k]];
            }
            worst = mismatch.size() > 0 ? mismatch.cwiseAbs().maxCoeff(&worst_row) : 0.0;
            result.iterations = it;
            if (worst <= options.tolerance)
            {
                break;
            }
            if (it == options.max_iterations || !std::isfinite(worst))
            {
                const Eigen::Index bus = worst_row < na ? ang_idx[worst_row] : mag_idx[worst_row - na];
                throw GridError(GridError::Code::NonConvergence,
                                fmt::format("power flow did not converge in {} iterations; worst mismatch {:.3e} pu "
                                            "at bus {}",
                                            options.max_iterations, worst, grid.buses[static_cast<std::size_t>(bus)].id));
            }
            detail::injection_jacobian(G, B, vm, va, p, q, dp_da, dp_dv, dq_da, dq_dv);
            for (Eigen::Index r = 0; r < na; ++r)
            {
                for (Eigen::Index c = 0; c < na; ++c)
                {
                    jac(r, c) = dp_da(ang_idx[r], ang_idx[c]);
                }
                for (Eigen::Index c = 0; c < nm; ++c)
                {
                    jac(r, na + c) = dp_dv(ang_idx[r], mag_idx[c]);
                }
            }
            for (Eigen::Index r = 0; r < nm; ++r)
            {
                for (Eigen::Index c = 0; c < na; ++c)
                {
                    jac(na + r, c) = dq_da(mag_idx[r], ang_idx[c]);
                }
                for (Eigen::Index c = 0; c < nm; ++c)
                {
                    jac(na + r, na + c) = dq_dv(mag_idx[r], mag_idx[c]);
                }
            }
            const Eigen::VectorXd dx = jac.partialPivLu().solve(mismatch);
            for (Eigen::Index k = 0; k < na; ++k)
            {
                va[ang_idx[k]] += dx[k];
            }
            for (Eigen::Index k = 0; k < nm; ++k)
            {
                vm[mag_idx[k]] += dx[na + k];
            }
        }

        detail::injections(G, B, vm, va, p, q);
        result.vm = vm;
        result.va = va;
        result.max_mismatch = worst;
        result.p_gen.resize(ni);
        result.q_gen.resize(ni);
        for (std::size_t i = 0; i < n; ++i)
        {
            const auto &b = grid.buses[i];
            const auto ii = static_cast<Eigen::Index>(i);
            result.p_gen[ii] = p[ii] + b.load_p + b.boundary_p - b.der_p;
            result.q_gen[ii] = q[ii] + b.load_q + b.boundary_q;
        }
        return result;
    }

    double branch_losses(const Grid &grid, const PowerFlowResult &pf)
    {
        double losses = 0.0;
        for (const auto &br : grid.branches)
        {
            if (!br.in_service)
            {
                continue;
            }
            const auto f = grid.bus_index(br.from);
            const auto t = grid.bus_index(br.to);
            const Complex vf = pf.voltage(f);
            const Complex vt = pf.voltage(t);
            const Complex ys = 1.0 / Complex(br.r, br.x);
            const Complex ysh(0.0, 0.5 * br.b);
            const Complex i_f = (vf / br.tap - vt) * ys / br.tap + vf * ysh / (br.tap * br.tap);
            const Complex i_t = (vt - vf / br.tap) * ys + vt * ysh;
            losses += (vf * std::conj(i_f) + vt * std::conj(i_t)).real();
        }
        return losses;
    }
} // namespace tdcosim::transmission
