#pragma once

#include <Eigen/Dense>

#include <string>

namespace tdcosim::headroom
{
    enum class LpStatus
    {
        Optimal,
        Infeasible,
        Unbounded,
        IterationLimit,
    };

    std::string to_string(LpStatus s);

    /// maximize cᵀx  s.t.  A x ≤ b,  lower ≤ x ≤ upper (finite bounds).
    struct LinearProgram
    {
        Eigen::VectorXd c;
        Eigen::MatrixXd a;
        Eigen::VectorXd b;
        Eigen::VectorXd lower;
        Eigen::VectorXd upper;
    };

    struct LpSolution
    {
        LpStatus status = LpStatus::Infeasible;
        Eigen::VectorXd x;
        double objective = 0.0;
        int pivots = 0;
    };

    /// Dense two-phase simplex with Bland's rule.
    LpSolution solve_lp(const LinearProgram &lp, double tol = 1e-9, int max_pivots = 20000);
} // namespace tdcosim::headroom
