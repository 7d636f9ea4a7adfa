#pragma once

#include "tdcosim/transmission/grid.hpp"

#include <Eigen/Dense>

#include <vector>

namespace tdcosim::transmission
{
    struct PowerFlowOptions
    {
        double tolerance = 1e-10;
        int max_iterations = 50;
    };

    struct PowerFlowResult
    {
        Eigen::VectorXd vm;  // pu
        Eigen::VectorXd va;  // rad
        Eigen::VectorXd p_gen; // net generator injection per bus, pu
        Eigen::VectorXd q_gen;
        int iterations = 0;
        double max_mismatch = 0.0;

        Complex voltage(std::size_t bus) const { return std::polar(vm[static_cast<Eigen::Index>(bus)], va[static_cast<Eigen::Index>(bus)]); }
    };

    /// Newton-Raphson power flow in polar form. Loads (native, boundary, DER) are
    /// treated as constant power at the solution point.
    ///
    /// Throws GridError::Islanded when a bus is not connected to the slack and
    /// GridError::NonConvergence (naming the worst-mismatch bus) after max_iterations.
    PowerFlowResult solve_power_flow(const Grid &grid, const PowerFlowOptions &options = {});

    /// Sum over in-service branches of series and shunt losses, pu.
    double branch_losses(const Grid &grid, const PowerFlowResult &pf);
} // namespace tdcosim::transmission
