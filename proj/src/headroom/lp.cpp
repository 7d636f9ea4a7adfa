#include "tdcosim/headroom/lp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace tdcosim::headroom
{
    std::string to_string(LpStatus s)
    {
        switch (s)
        {
        case LpStatus::Optimal:
            return "optimal";
        case LpStatus::Infeasible:
            return "infeasible";
        case LpStatus::Unbounded:
            return "unbounded";
        case LpStatus::IterationLimit:
            return "iteration limit";
        }
        return "unknown";
    }

    namespace
    {
        // Tableau over equality rows T[:, :n] x = T[:, n], x >= 0, basis[i] per row.
        struct Tableau
        {
            Eigen::MatrixXd t;
            std::vector<int> basis;
            int pivots = 0;

            int cols() const { return static_cast<int>(t.cols()) - 1; }

            void pivot(int row, int col)
            {
                t.row(row) /= t(row, col);
                for (int r = 0; r < t.rows(); ++r)
                {
                    if (r != row && t(r, col) != 0.0)
                    {
                        t.row(r) -= t(r, col) * t.row(row);
                    }
                }
                basis[static_cast<std::size_t>(row)] = col;
                ++pivots;
            }

            // Minimizes cost over the allowed columns. Reduced costs are rebuilt from the basis.
            LpStatus minimize(const Eigen::VectorXd &cost, const std::vector<bool> &allowed, double tol, int max_pivots)
            {
                const int m = static_cast<int>(t.rows());
                const int n = cols();
                while (true)
                {
                    if (pivots >= max_pivots)
                    {
                        return LpStatus::IterationLimit;
                    }
                    // Bland: lowest-index column with a negative reduced cost.
                    int enter = -1;
                    for (int j = 0; j < n && enter < 0; ++j)
                    {
                        if (!allowed[static_cast<std::size_t>(j)])
                        {
                            continue;
                        }
                        double rc = cost[j];
                        for (int i = 0; i < m; ++i)
                        {
                            rc -= cost[basis[static_cast<std::size_t>(i)]] * t(i, j);
                        }
                        if (rc < -tol)
                        {
                            enter = j;
                        }
                    }
                    if (enter < 0)
                    {
                        return LpStatus::Optimal;
                    }
                    int leave = -1;
                    double best = std::numeric_limits<double>::infinity();
                    for (int i = 0; i < m; ++i)
                    {
                        const double a = t(i, enter);
                        if (a > tol)
                        {
                            const double ratio = t(i, n) / a;
                            if (ratio < best - tol ||
                                (std::abs(ratio - best) <= tol && leave >= 0 &&
                                 basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)]))
                            {
                                best = ratio;
                                leave = i;
                            }
                        }
                    }
                    if (leave < 0)
                    {
                        return LpStatus::Unbounded;
                    }
                    pivot(leave, enter);
                }
            }
        };
    } // namespace

    LpSolution solve_lp(const LinearProgram &lp, double tol, int max_pivots)
    {
        const auto nv = lp.c.size();
        const auto nr = lp.a.rows();
        if (lp.a.cols() != nv || lp.b.size() != nr || lp.lower.size() != nv || lp.upper.size() != nv)
        {
            throw std::invalid_argument("linear program dimensions do not agree");
        }
        for (Eigen::Index j = 0; j < nv; ++j)
        {
            if (!std::isfinite(lp.lower[j]) || !std::isfinite(lp.upper[j]))
            {
                throw std::invalid_argument("linear program bounds must be finite");
            }
        }
        LpSolution out;
        out.x = lp.lower;
        if ((lp.upper - lp.lower).minCoeff() < -tol)
        {
            out.status = LpStatus::Infeasible;
            return out;
        }

        // Shift to y = x - lower >= 0. Rows: A y <= b - A lower, and y <= upper - lower.
        // A row that holds at every corner of the box cannot cut the feasible set and is dropped.
        const Eigen::VectorXd span = lp.upper - lp.lower;
        const Eigen::VectorXd shifted = lp.b - lp.a * lp.lower;
        std::vector<Eigen::Index> kept;
        for (Eigen::Index i = 0; i < nr; ++i)
        {
            const double reach = lp.a.row(i).cwiseMax(0.0).dot(span);
            if (reach > shifted[i])
            {
                kept.push_back(i);
            }
        }
        const auto nk = static_cast<Eigen::Index>(kept.size());
        const Eigen::Index rows = nk + nv;
        Eigen::MatrixXd a(rows, nv);
        Eigen::VectorXd b(rows);
        for (Eigen::Index r = 0; r < nk; ++r)
        {
            a.row(r) = lp.a.row(kept[static_cast<std::size_t>(r)]);
            b[r] = shifted[kept[static_cast<std::size_t>(r)]];
        }
        a.bottomRows(nv).setIdentity();
        b.tail(nv) = span;

        // Columns: y (nv), slacks (rows), artificials (one per negative-rhs row).
        std::vector<Eigen::Index> neg;
        for (Eigen::Index i = 0; i < rows; ++i)
        {
            if (b[i] < 0.0)
            {
                neg.push_back(i);
            }
        }
        const auto na = static_cast<Eigen::Index>(neg.size());
        const Eigen::Index ncols = nv + rows + na;
        Tableau tab;
        tab.t = Eigen::MatrixXd::Zero(rows, ncols + 1);
        tab.basis.assign(static_cast<std::size_t>(rows), 0);
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < rows; ++i)
        {
            const double sign = b[i] < 0.0 ? -1.0 : 1.0;
            tab.t.row(i).head(nv) = sign * a.row(i);
            tab.t(i, nv + i) = sign;
            tab.t(i, ncols) = sign * b[i];
            if (sign < 0.0)
            {
                tab.t(i, nv + rows + k) = 1.0;
                tab.basis[static_cast<std::size_t>(i)] = static_cast<int>(nv + rows + k);
                ++k;
            }
            else
            {
                tab.basis[static_cast<std::size_t>(i)] = static_cast<int>(nv + i);
            }
        }

        std::vector<bool> allowed(static_cast<std::size_t>(ncols), true);
        if (na > 0)
        {
            Eigen::VectorXd cost = Eigen::VectorXd::Zero(ncols);
            cost.tail(na).setOnes();
            const auto st = tab.minimize(cost, allowed, tol, max_pivots);
            if (st == LpStatus::IterationLimit)
            {
                out.status = st;
                return out;
            }
            double infeas = 0.0;
            for (Eigen::Index i = 0; i < rows; ++i)
            {
                if (tab.basis[static_cast<std::size_t>(i)] >= nv + rows)
                {
                    infeas += tab.t(i, ncols);
                }
            }
            if (infeas > tol * std::max(1.0, b.cwiseAbs().maxCoeff()))
            {
                out.status = LpStatus::Infeasible;
                return out;
            }
            // Drive zero-valued artificials out of the basis where possible.
            for (Eigen::Index i = 0; i < rows; ++i)
            {
                if (tab.basis[static_cast<std::size_t>(i)] >= nv + rows)
                {
                    for (Eigen::Index j = 0; j < nv + rows; ++j)
                    {
                        if (std::abs(tab.t(i, j)) > tol)
                        {
                            tab.pivot(static_cast<int>(i), static_cast<int>(j));
                            break;
                        }
                    }
                }
            }
            for (Eigen::Index j = nv + rows; j < ncols; ++j)
            {
                allowed[static_cast<std::size_t>(j)] = false;
            }
        }

        Eigen::VectorXd cost = Eigen::VectorXd::Zero(ncols);
        cost.head(nv) = -lp.c;
        const auto st = tab.minimize(cost, allowed, tol, max_pivots);
        out.pivots = tab.pivots;
        if (st != LpStatus::Optimal)
        {
            out.status = st;
            return out;
        }
        Eigen::VectorXd y = Eigen::VectorXd::Zero(nv);
        for (Eigen::Index i = 0; i < rows; ++i)
        {
            const int col = tab.basis[static_cast<std::size_t>(i)];
            if (col < nv)
            {
                y[col] = tab.t(i, ncols);
            }
        }
        out.x = (lp.lower + y).cwiseMax(lp.lower).cwiseMin(lp.upper);
        out.objective = lp.c.dot(out.x);
        out.status = LpStatus::Optimal;
        return out;
    }
} // namespace tdcosim::headroom
