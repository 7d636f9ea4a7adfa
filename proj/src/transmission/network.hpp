#pragma once

#include "tdcosim/transmission/grid.hpp"

#include <Eigen/Dense>

namespace tdcosim::transmission::detail
{
    /// Bus admittance matrix from branches and fixed shunts (loads excluded).
    Eigen::MatrixXcd build_ybus(const Grid &grid);

    /// Network power injections P_i, Q_i for polar voltages.
    void injections(const Eigen::MatrixXd &G, const Eigen::MatrixXd &B, const Eigen::VectorXd &vm,
                    const Eigen::VectorXd &va, Eigen::VectorXd &p, Eigen::VectorXd &q);

    /// dP/dtheta, dP/dV, dQ/dtheta, dQ/dV for all buses. p and q must be the current injections.
    void injection_jacobian(const Eigen::MatrixXd &G, const Eigen::MatrixXd &B, const Eigen::VectorXd &vm,
                            const Eigen::VectorXd &va, const Eigen::VectorXd &p, const Eigen::VectorXd &q,
                            Eigen::MatrixXd &dp_da, Eigen::MatrixXd &dp_dv, Eigen::MatrixXd &dq_da,
                            Eigen::MatrixXd &dq_dv);
} // namespace tdcosim::transmission::detail
