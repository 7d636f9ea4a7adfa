#pragma once

#include "tdcosim/distribution/feeder.hpp"
#include "tdcosim/headroom/lp.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tdcosim::headroom
{
    using distribution::FeederNetwork;

    struct OperatingPoint
    {
        distribution::Complex v_sub_pu{1.0, 0.0};
        std::vector<double> der_p_mw; // one per feeder DER
        double load_multiplier = 1.0;
    };

    struct VsmOptions
    {
        double delta_mw = 0.01;
        // Monitor every node-phase except the substation; otherwise only DER node-phases.
        bool monitor_all = true;
        distribution::SolveOptions solve{};
    };

    struct MonitoredPoint
    {
        std::size_t node = 0;
        int phase = 0;
    };

    struct MonitoredBranch
    {
        std::size_t branch = 0;
        int phase = 0;
        double ampacity = 0.0;
    };

    struct VsmMatrix
    {
        Eigen::MatrixXd j;         // pu voltage per MW, rows = monitored, cols = DERs
        Eigen::VectorXd v_base;    // pu
        Eigen::VectorXd p_base;    // MW
        Eigen::MatrixXd j_current; // A per MW, rows = rated branch-phases
        Eigen::VectorXd i_base;    // A
        std::vector<MonitoredPoint> monitored;
        std::vector<MonitoredBranch> branches;
        std::vector<std::string> column_errors; // empty string when the column solved
        double built_at = 0.0;
        double delta = 0.0;

        bool ok() const;
    };

    /// One base solve plus one forward-difference solve per DER.
    VsmMatrix build_vsm(const FeederNetwork &feeder, const OperatingPoint &op, const VsmOptions &options = {},
                        double t = 0.0);

    struct HeadroomLimits
    {
        double v_lo = 0.95;
        double v_hi = 1.05;
        Eigen::VectorXd p_cap; // MW per DER
        bool current_limits = true;
        double tolerance = 1e-9;
    };

    struct HeadroomResult
    {
        Eigen::VectorXd delta_p; // MW
        Eigen::VectorXd p_opt;   // p_base + delta_p
        double headroom = 0.0;   // MW, feeder total
        std::vector<std::string> binding;
        LpStatus status = LpStatus::Infeasible;
        std::string diagnostic;
    };

    HeadroomResult solve_headroom_lp(const VsmMatrix &vsm, const HeadroomLimits &limits);

    /// Linearized headroom whose optimum is re-solved on the nonlinear feeder. If the
    /// optimum violates a bound, the bounds are tightened by the overshoot and the LP repeated.
    struct VerifiedHeadroom
    {
        VsmMatrix vsm;
        HeadroomResult result;
        int refinements = 0;
        double worst_violation = 0.0; // pu beyond the bounds after the last re-solve
    };

    VerifiedHeadroom compute_headroom(const FeederNetwork &feeder, const OperatingPoint &op,
                                      const HeadroomLimits &limits, const VsmOptions &options = {}, double t = 0.0,
                                      int max_refinements = 5);

    /// True when a rebuild is due.
    bool refresh_policy(double t, std::optional<double> last_built, double period = 10.0);

    std::vector<MonitoredPoint> monitored_points(const FeederNetwork &feeder, bool monitor_all);
} // namespace tdcosim::headroom
