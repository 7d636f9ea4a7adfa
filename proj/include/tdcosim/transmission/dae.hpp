#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace tdcosim::transmission
{
    using Eigen::MatrixXd;
    using Eigen::VectorXd;

    /// Semi-explicit mass-matrix DAE:  M x' = f(x, y, u),  0 = g(x, y, u).
    ///
    /// Inputs u are owned by the implementing model. M is diagonal; a zero
    /// entry turns that row of f into an algebraic constraint f_i = 0.
    class DaeModel
    {
    public:
        virtual ~DaeModel() = default;

        virtual Eigen::Index state_count() const = 0;
        virtual Eigen::Index algebraic_count() const = 0;
        virtual VectorXd mass() const = 0;

        virtual void residual(const VectorXd &x, const VectorXd &y, VectorXd &f, VectorXd &g) const = 0;

        /// Partial derivatives of f and g. Output matrices arrive sized and zeroed.
        virtual void jacobian(const VectorXd &x, const VectorXd &y, MatrixXd &fx, MatrixXd &fy, MatrixXd &gx,
                              MatrixXd &gy) const = 0;
    };

    struct DaeState
    {
        VectorXd x;
        VectorXd y;
        double t = 0.0;
    };

    class DaeError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    struct IntegratorOptions
    {
        double tolerance = 1e-8;
        int max_newton_iterations = 12;
        int max_halvings = 4;
    };

    struct StepStats
    {
        int newton_iterations = 0;
        int halvings = 0;
        double residual = 0.0;
    };

    /// Implicit trapezoidal rule on the full DAE, solved simultaneously by Newton.
    class TrapezoidalIntegrator
    {
    public:
        explicit TrapezoidalIntegrator(IntegratorOptions options = {}) : options_(options) {}

        /// Advances `state` by dt. On Newton divergence the step is split in halves
        /// up to max_halvings times, then DaeError is thrown with a state dump.
        StepStats step(const DaeModel &model, DaeState &state, double dt) const;

        /// Solves g(x, y) = 0 for y with x held fixed. Returns the final residual.
        double solve_algebraic(const DaeModel &model, DaeState &state) const;

        const IntegratorOptions &options() const noexcept { return options_; }

    private:
        bool try_step(const DaeModel &model, DaeState &state, double dt, StepStats &stats) const;
        StepStats step_recursive(const DaeModel &model, DaeState &state, double dt, int depth) const;

        IntegratorOptions options_;
    };
} // namespace tdcosim::transmission
