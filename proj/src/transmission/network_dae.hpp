#pragma once

#include "tdcosim/transmission/dae.hpp"

#include <cstddef>
#include <vector>

namespace tdcosim::transmission
{
    /// One online machine in the state layout [delta, omega, pm].
    struct GenSlot
    {
        std::size_t generator = 0; // index into Grid::generators
        Eigen::Index bus = 0;
        double e = 1.0;
        double xd = 0.25;
        double h = 5.0;
        double d = 0.0;
        double r = 0.05;
        double tg = 0.5;
        double pmin = 0.0;
        double pmax = 1.0;
        double pref = 0.0;
        double pext = 0.0;
        bool governor = true;
    };

    /// Classical machines on a Ybus network. Algebraic unknowns are [theta, V] for every bus.
    ///
    ///   delta' = ws (w - 1)
    ///   2H w'  = pm - pe - D (w - 1)
    ///   Tg pm' = clamp(pref + pext - (w - 1)/R, pmin, pmax) - pm
    ///   0 = P_i(V, theta) + PL_i - Pder_i - sum pe,   0 = Q_i(V, theta) + QL_i - sum qg
    class NetworkDae : public DaeModel
    {
    public:
        Eigen::MatrixXd G; // network plus constant-impedance loads
        Eigen::MatrixXd B;
        Eigen::VectorXd pl; // constant-power load
        Eigen::VectorXd ql;
        Eigen::VectorXd pder;
        std::vector<GenSlot> gens;
        double ws = 376.99111843077515;

        Eigen::Index bus_count() const { return G.rows(); }

        Eigen::Index state_count() const override { return static_cast<Eigen::Index>(3 * gens.size()); }
        Eigen::Index algebraic_count() const override { return 2 * bus_count(); }
        VectorXd mass() const override;
        void residual(const VectorXd &x, const VectorXd &y, VectorXd &f, VectorXd &g) const override;
        void jacobian(const VectorXd &x, const VectorXd &y, MatrixXd &fx, MatrixXd &fy, MatrixXd &gx,
                      MatrixXd &gy) const override;

        double electrical_power(const GenSlot &gen, double delta, const VectorXd &y) const;
        double governor_command(const GenSlot &gen, double omega, bool *clamped = nullptr) const;
    };
} // namespace tdcosim::transmission
