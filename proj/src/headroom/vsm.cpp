#include "tdcosim/headroom/vsm.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace tdcosim::headroom
{
    using distribution::DistributionError;
    using distribution::FeederSolution;
    using distribution::has_phase;

    bool VsmMatrix::ok() const
    {
        return std::all_of(column_errors.begin(), column_errors.end(), [](const auto &e) { return e.empty(); });
    }

    std::vector<MonitoredPoint> monitored_points(const FeederNetwork &feeder, bool monitor_all)
    {
        std::vector<bool> der_node(feeder.nodes.size(), false);
        for (const auto &d : feeder.ders)
        {
            der_node[d.node] = true;
        }
        std::vector<MonitoredPoint> out;
        for (std::size_t i = 0; i < feeder.nodes.size(); ++i)
        {
            if (i == feeder.substation || (!monitor_all && !der_node[i]))
            {
                continue;
            }
            for (int ph = 0; ph < 3; ++ph)
            {
                if (has_phase(feeder.nodes[i].phases, ph))
                {
                    out.push_back({i, ph});
                }
            }
        }
        return out;
    }

    namespace
    {
        Eigen::VectorXd voltages(const FeederSolution &sol, const std::vector<MonitoredPoint> &pts)
        {
            Eigen::VectorXd v(static_cast<Eigen::Index>(pts.size()));
            for (std::size_t k = 0; k < pts.size(); ++k)
            {
                v[static_cast<Eigen::Index>(k)] = sol.v_pu(pts[k].node, pts[k].phase);
            }
            return v;
        }

        Eigen::VectorXd currents(const FeederSolution &sol, const std::vector<MonitoredBranch> &brs)
        {
            Eigen::VectorXd i(static_cast<Eigen::Index>(brs.size()));
            for (std::size_t k = 0; k < brs.size(); ++k)
            {
                i[static_cast<Eigen::Index>(k)] = std::abs(sol.i[brs[k].branch][static_cast<std::size_t>(brs[k].phase)]);
            }
            return i;
        }
    } // namespace

    VsmMatrix build_vsm(const FeederNetwork &feeder, const OperatingPoint &op, const VsmOptions &options, double t)
    {
        if (!(options.delta_mw > 0.0))
        {
            throw std::invalid_argument("VSM perturbation must be positive");
        }
        if (op.der_p_mw.size() != feeder.ders.size())
        {
            throw std::invalid_argument(fmt::format("feeder '{}' has {} DERs, operating point gives {}", feeder.name,
                                                    feeder.ders.size(), op.der_p_mw.size()));
        }
        VsmMatrix vsm;
        vsm.built_at = t;
        vsm.delta = options.delta_mw;
        vsm.monitored = monitored_points(feeder, options.monitor_all);
        for (std::size_t k = 0; k < feeder.branches.size(); ++k)
        {
            const auto &br = feeder.branches[k];
            if (br.ampacity <= 0.0)
            {
                continue;
            }
            for (int ph = 0; ph < 3; ++ph)
            {
                if (has_phase(br.phases, ph))
                {
                    vsm.branches.push_back({k, ph, br.ampacity});
                }
            }
        }
        const auto m = static_cast<Eigen::Index>(feeder.ders.size());
        vsm.p_base = Eigen::Map<const Eigen::VectorXd>(op.der_p_mw.data(), m);

        const auto base = distribution::solve_feeder(feeder, op.v_sub_pu, op.der_p_mw, op.load_multiplier, options.solve);
        vsm.v_base = voltages(base, vsm.monitored);
        vsm.i_base = currents(base, vsm.branches);
        vsm.j = Eigen::MatrixXd::Zero(vsm.v_base.size(), m);
        vsm.j_current = Eigen::MatrixXd::Zero(vsm.i_base.size(), m);
        vsm.column_errors.assign(static_cast<std::size_t>(m), std::string());

        std::vector<double> p = op.der_p_mw;
        for (Eigen::Index c = 0; c < m; ++c)
        {
            const auto idx = static_cast<std::size_t>(c);
            p[idx] += options.delta_mw;
            try
            {
                const auto pert =
                    distribution::solve_feeder(feeder, op.v_sub_pu, p, op.load_multiplier, options.solve, &base);
                vsm.j.col(c) = (voltages(pert, vsm.monitored) - vsm.v_base) / options.delta_mw;
                vsm.j_current.col(c) = (currents(pert, vsm.branches) - vsm.i_base) / options.delta_mw;
            }
            catch (const DistributionError &e)
            {
                vsm.column_errors[idx] = fmt::format("DER '{}': {}", feeder.ders[idx].id, e.what());
            }
            p[idx] = op.der_p_mw[idx];
        }
        return vsm;
    }

    HeadroomResult solve_headroom_lp(const VsmMatrix &vsm, const HeadroomLimits &limits)
    {
        const auto m = vsm.p_base.size();
        HeadroomResult res;
        res.delta_p = Eigen::VectorXd::Zero(m);
        res.p_opt = vsm.p_base;
        if (m == 0)
        {
            res.status = LpStatus::Optimal;
            return res;
        }
        if (limits.p_cap.size() != m)
        {
            throw std::invalid_argument("headroom limits need one capacity per DER");
        }
        if (!vsm.ok())
        {
            res.status = LpStatus::Infeasible;
            res.diagnostic = "sensitivity build failed: ";
            for (const auto &e : vsm.column_errors)
            {
                if (!e.empty())
                {
                    res.diagnostic += e + "; ";
                }
            }
            return res;
        }

        const auto nv = vsm.v_base.size();
        const auto ni = limits.current_limits ? vsm.i_base.size() : Eigen::Index{0};
        LinearProgram lp;
        lp.c = Eigen::VectorXd::Ones(m);
        lp.a.resize(2 * nv + ni, m);
        lp.b.resize(2 * nv + ni);
        lp.a.topRows(nv) = vsm.j;
        lp.b.head(nv) = Eigen::VectorXd::Constant(nv, limits.v_hi) - vsm.v_base;
        lp.a.middleRows(nv, nv) = -vsm.j;
        lp.b.segment(nv, nv) = vsm.v_base - Eigen::VectorXd::Constant(nv, limits.v_lo);
        if (ni > 0)
        {
            lp.a.bottomRows(ni) = vsm.j_current;
            Eigen::VectorXd amp(ni);
            for (Eigen::Index k = 0; k < ni; ++k)
            {
                amp[k] = vsm.branches[static_cast<std::size_t>(k)].ampacity;
            }
            lp.b.tail(ni) = amp - vsm.i_base;
        }
        lp.lower = -vsm.p_base;
        lp.upper = limits.p_cap - vsm.p_base;

        const auto sol = solve_lp(lp, limits.tolerance);
        res.status = sol.status;
        if (sol.status != LpStatus::Optimal)
        {
            const double worst_hi = (vsm.v_base.array() - limits.v_hi).maxCoeff();
            const double worst_lo = (limits.v_lo - vsm.v_base.array()).maxCoeff();
            res.diagnostic = fmt::format("headroom LP {}: base voltage range [{:.5f}, {:.5f}] pu against [{}, {}]",
                                         to_string(sol.status), vsm.v_base.minCoeff(), vsm.v_base.maxCoeff(),
                                         limits.v_lo, limits.v_hi);
            if (worst_hi <= 0.0 && worst_lo <= 0.0)
            {
                res.diagnostic += " (current limits)";
            }
            return res;
        }
        res.delta_p = sol.x;
        res.p_opt = vsm.p_base + sol.x;
        res.headroom = sol.x.sum();

        const Eigen::VectorXd slack = lp.b - lp.a * sol.x;
        const double bind_tol = 1e-7;
        for (Eigen::Index k = 0; k < nv; ++k)
        {
            const auto &pt = vsm.monitored[static_cast<std::size_t>(k)];
            const char ph = static_cast<char>('a' + pt.phase);
            if (slack[k] <= bind_tol)
            {
                res.binding.push_back(fmt::format("v_hi node {} phase {}", pt.node, ph));
            }
            if (slack[nv + k] <= bind_tol)
            {
                res.binding.push_back(fmt::format("v_lo node {} phase {}", pt.node, ph));
            }
        }
        for (Eigen::Index k = 0; k < ni; ++k)
        {
            if (slack[2 * nv + k] <= bind_tol)
            {
                const auto &br = vsm.branches[static_cast<std::size_t>(k)];
                res.binding.push_back(
                    fmt::format("ampacity branch {} phase {}", br.branch, static_cast<char>('a' + br.phase)));
            }
        }
        for (Eigen::Index j = 0; j < m; ++j)
        {
            if (res.p_opt[j] >= limits.p_cap[j] - bind_tol)
            {
                res.binding.push_back(fmt::format("capacity DER {}", j));
            }
        }
        return res;
    }

    VerifiedHeadroom compute_headroom(const FeederNetwork &feeder, const OperatingPoint &op,
                                      const HeadroomLimits &limits, const VsmOptions &options, double t,
                                      int max_refinements)
    {
        VerifiedHeadroom out;
        out.vsm = build_vsm(feeder, op, options, t);
        HeadroomLimits lim = limits;
        for (int pass = 0;; ++pass)
        {
            out.result = solve_headroom_lp(out.vsm, lim);
            out.refinements = pass;
            if (out.result.status != LpStatus::Optimal || out.result.delta_p.size() == 0 ||
                out.result.delta_p.cwiseAbs().maxCoeff() == 0.0)
            {
                out.worst_violation = 0.0;
                break;
            }
            std::vector<double> p(out.result.p_opt.data(), out.result.p_opt.data() + out.result.p_opt.size());
            const auto sol = distribution::solve_feeder(feeder, op.v_sub_pu, p, op.load_multiplier, options.solve);
            double over = 0.0;
            double under = 0.0;
            for (const auto &pt : out.vsm.monitored)
            {
                const double v = sol.v_pu(pt.node, pt.phase);
                over = std::max(over, v - limits.v_hi);
                under = std::max(under, limits.v_lo - v);
            }
            // Only new violations count: a bound already violated at the base is not the LP's doing.
            const double base_over = std::max(0.0, (out.vsm.v_base.array() - limits.v_hi).maxCoeff());
            const double base_under = std::max(0.0, (limits.v_lo - out.vsm.v_base.array()).maxCoeff());
            over = over > base_over ? over : 0.0;
            under = under > base_under ? under : 0.0;
            out.worst_violation = std::max(over, under);
            if (out.worst_violation <= 0.0 || pass >= max_refinements)
            {
                break;
            }
            lim.v_hi -= over > 0.0 ? over + 1e-7 : 0.0;
            lim.v_lo += under > 0.0 ? under + 1e-7 : 0.0;
        }
        if (out.result.status != LpStatus::Optimal)
        {
            out.result.headroom = 0.0;
        }
        return out;
    }

    bool refresh_policy(double t, std::optional<double> last_built, double period)
    {
        if (!last_built)
        {
            return true;
        }
        return t - *last_built >= period - 1e-9;
    }
} // namespace tdcosim::headroom
