#include "tdcosim/transmission/dae.hpp"

#include <fmt/format.h>

#include <cmath>

namespace tdcosim::transmission
{
    namespace
    {
        std::string dump_state(const DaeState &state)
        {
            std::string out = fmt::format("t={:.6f}\n  x:", state.t);
            for (Eigen::Index i = 0; i < state.x.size(); ++i)
            {
                out += fmt::format(" {:.10g}", state.x[i]);
            }
            out += "\n  y:";
            for (Eigen::Index i = 0; i < state.y.size(); ++i)
            {
                out += fmt::format(" {:.10g}", state.y[i]);
            }
            return out;
        }
    } // namespace

    double TrapezoidalIntegrator::solve_algebraic(const DaeModel &model, DaeState &state) const
    {
        const auto nx = model.state_count();
        const auto ny = model.algebraic_count();
        if (ny == 0)
        {
            return 0.0;
        }
        VectorXd f(nx), g(ny);
        MatrixXd fx(nx, nx), fy(nx, ny), gx(ny, nx), gy(ny, ny);
        double norm = 0.0;
        for (int it = 0; it <= 2 * options_.max_newton_iterations; ++it)
        {
            model.residual(state.x, state.y, f, g);
            norm = g.lpNorm<Eigen::Infinity>();
            if (!std::isfinite(norm))
            {
                break;
            }
            if (norm <= 0.01 * options_.tolerance)
            {
                return norm;
            }
            fx.setZero();
            fy.setZero();
            gx.setZero();
            gy.setZero();
            model.jacobian(state.x, state.y, fx, fy, gx, gy);
            VectorXd dy = gy.partialPivLu().solve(-g);
            state.y += dy;
            if (dy.lpNorm<Eigen::Infinity>() < 1e-14)
            {
                model.residual(state.x, state.y, f, g);
                return g.lpNorm<Eigen::Infinity>();
            }
        }
        if (!(norm <= options_.tolerance))
        {
            throw DaeError(fmt::format("algebraic initialization did not converge (|g|={:.3e})\n{}", norm,
                                       dump_state(state)));
        }
        return norm;
    }

    bool TrapezoidalIntegrator::try_step(const DaeModel &model, DaeState &state, double dt, StepStats &stats) const
    {
        const auto nx = model.state_count();
        const auto ny = model.algebraic_count();
        const auto n = nx + ny;
        const VectorXd mass = model.mass();

        VectorXd f0(nx), g0(ny);
        model.residual(state.x, state.y, f0, g0);

        VectorXd x = state.x;
        VectorXd y = state.y;
        VectorXd f(nx), g(ny), r(n);
        MatrixXd fx(nx, nx), fy(nx, ny), gx(ny, nx), gy(ny, ny), jac(n, n);
        const double h2 = 0.5 * dt;

        auto assemble_residual = [&] {
            model.residual(x, y, f, g);
            for (Eigen::Index i = 0; i < nx; ++i)
            {
                if (mass[i] == 0.0)
                {
                    r[i] = f[i];
                }
                else
                {
                    r[i] = mass[i] * (x[i] - state.x[i]) - h2 * (f[i] + f0[i]);
                }
            }
            r.tail(ny) = g;
            return r.lpNorm<Eigen::Infinity>();
        };

        double norm = assemble_residual();
        for (int it = 0; it < options_.max_newton_iterations; ++it)
        {
            if (!std::isfinite(norm))
            {
                return false;
            }
            if (norm <= options_.tolerance && it > 0)
            {
                break;
            }
            if (norm <= 0.01 * options_.tolerance)
            {
                break;
            }
            fx.setZero();
            fy.setZero();
            gx.setZero();
            gy.setZero();
            model.jacobian(x, y, fx, fy, gx, gy);
            for (Eigen::Index i = 0; i < nx; ++i)
            {
                if (mass[i] == 0.0)
                {
                    jac.row(i).head(nx) = fx.row(i);
                    jac.row(i).tail(ny) = fy.row(i);
                }
                else
                {
                    jac.row(i).head(nx) = -h2 * fx.row(i);
                    jac(i, i) += mass[i];
                    jac.row(i).tail(ny) = -h2 * fy.row(i);
                }
            }
            jac.bottomLeftCorner(ny, nx) = gx;
            jac.bottomRightCorner(ny, ny) = gy;
            VectorXd delta = jac.partialPivLu().solve(-r);
            if (!delta.allFinite())
            {
                return false;
            }
            x += delta.head(nx);
            y += delta.tail(ny);
            ++stats.newton_iterations;
            norm = assemble_residual();
        }
        stats.residual = norm;
        if (!(norm <= options_.tolerance))
        {
            return false;
        }
        state.x = std::move(x);
        state.y = std::move(y);
        state.t += dt;
        return true;
    }

    StepStats TrapezoidalIntegrator::step_recursive(const DaeModel &model, DaeState &state, double dt, int depth) const
    {
        StepStats stats;
        DaeState trial = state;
        if (try_step(model, trial, dt, stats))
        {
            state = std::move(trial);
            return stats;
        }
        if (depth >= options_.max_halvings)
        {
            throw DaeError(fmt::format("Newton corrector diverged after {} step halvings (dt={:.3e}, |r|={:.3e})\n{}",
                                       depth, dt, stats.residual, dump_state(state)));
        }
        StepStats first = step_recursive(model, state, 0.5 * dt, depth + 1);
        StepStats second = step_recursive(model, state, 0.5 * dt, depth + 1);
        StepStats total;
        total.newton_iterations = stats.newton_iterations + first.newton_iterations + second.newton_iterations;
        total.halvings = 1 + std::max(first.halvings, second.halvings);
        total.residual = std::max(first.residual, second.residual);
        return total;
    }

    StepStats TrapezoidalIntegrator::step(const DaeModel &model, DaeState &state, double dt) const
    {
        if (!(dt > 0.0))
        {
            throw DaeError("step size must be positive");
        }
        return step_recursive(model, state, dt, 0);
    }
} // namespace tdcosim::transmission
