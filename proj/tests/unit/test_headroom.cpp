#include "tdcosim/headroom/vsm.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace tdcosim::headroom;
using namespace tdcosim::distribution;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace
{
    FeederNetwork two_node_der(Complex z_ohm, Complex load_phase_kva)
    {
        FeederNetwork f;
        f.name = "two";
        f.base_kv = 12.47;
        f.base_kva = 3000.0;
        f.nodes = {{"sub", kPhaseABC}, {"n1", kPhaseABC}};
        FeederBranch br;
        br.from = 0;
        br.to = 1;
        br.z = Eigen::Matrix3cd::Zero();
        br.z.diagonal().setConstant(z_ohm);
        f.branches = {br};
        f.loads = {{1, {load_phase_kva, load_phase_kva, load_phase_kva}}};
        FeederDer d;
        d.id = "pv";
        d.node = 1;
        d.p_caps_mw = 0.9;
        d.p_ref_mw = 0.5;
        f.ders = {d};
        f.finalize();
        return f;
    }

    // |V2| in pu from the closed-form two-bus solution with net per-phase load s (VA).
    double closed_form_v2(const FeederNetwork &f, Complex z, Complex s)
    {
        const double v1 = f.v_base();
        const double a = v1 * v1 - 2.0 * (z.real() * s.real() + z.imag() * s.imag());
        return std::sqrt((a + std::sqrt(a * a - 4.0 * std::norm(z) * std::norm(s))) / 2.0) / v1;
    }

    bool feasible(const FeederNetwork &f, const FeederSolution &sol, double v_lo, double v_hi)
    {
        for (std::size_t i = 0; i < f.nodes.size(); ++i)
        {
            if (i == f.substation)
            {
                continue;
            }
            for (int ph = 0; ph < 3; ++ph)
            {
                if (has_phase(f.nodes[i].phases, ph))
                {
                    const double v = sol.v_pu(i, ph);
                    if (v < v_lo || v > v_hi)
                    {
                        return false;
                    }
                }
            }
        }
        for (std::size_t k = 0; k < f.branches.size(); ++k)
        {
            for (int ph = 0; ph < 3; ++ph)
            {
                if (f.branches[k].ampacity > 0.0 && std::abs(sol.i[k][static_cast<std::size_t>(ph)]) > f.branches[k].ampacity)
                {
                    return false;
                }
            }
        }
        return true;
    }

    // Best objective over the vertices of a two-variable polytope.
    double vertex_enumeration(const LinearProgram &lp, bool &any)
    {
        std::vector<Eigen::Vector3d> rows; // a0 x + a1 y <= b
        for (Eigen::Index i = 0; i < lp.a.rows(); ++i)
        {
            rows.emplace_back(lp.a(i, 0), lp.a(i, 1), lp.b[i]);
        }
        rows.emplace_back(1, 0, lp.upper[0]);
        rows.emplace_back(-1, 0, -lp.lower[0]);
        rows.emplace_back(0, 1, lp.upper[1]);
        rows.emplace_back(0, -1, -lp.lower[1]);
        double best = -1e300;
        any = false;
        for (std::size_t i = 0; i < rows.size(); ++i)
        {
            for (std::size_t j = i + 1; j < rows.size(); ++j)
            {
                Eigen::Matrix2d m;
                m << rows[i][0], rows[i][1], rows[j][0], rows[j][1];
                if (std::abs(m.determinant()) < 1e-12)
                {
                    continue;
                }
                const Eigen::Vector2d x = m.inverse() * Eigen::Vector2d(rows[i][2], rows[j][2]);
                bool ok = true;
                for (const auto &r : rows)
                {
                    ok = ok && r[0] * x[0] + r[1] * x[1] <= r[2] + 1e-9;
                }
                if (ok)
                {
                    any = true;
                    best = std::max(best, lp.c.dot(x));
                }
            }
        }
        return best;
    }
} // namespace

TEST_CASE("simplex on a textbook problem", "[headroom][lp]")
{
    LinearProgram lp;
    lp.c = Eigen::Vector2d(3, 5);
    lp.a.resize(3, 2);
    lp.a << 1, 0, 0, 2, 3, 2;
    lp.b = Eigen::Vector3d(4, 12, 18);
    lp.lower = Eigen::Vector2d(0, 0);
    lp.upper = Eigen::Vector2d(100, 100);
    const auto s = solve_lp(lp);
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK_THAT(s.objective, WithinAbs(36.0, 1e-9));
    CHECK_THAT(s.x[0], WithinAbs(2.0, 1e-9));
    CHECK_THAT(s.x[1], WithinAbs(6.0, 1e-9));
}

TEST_CASE("simplex terminates on a cycling-prone problem", "[headroom][lp]")
{
    LinearProgram lp;
    lp.c.resize(4);
    lp.c << 0.75, -20, 0.5, -6;
    lp.a.resize(3, 4);
    lp.a << 0.25, -8, -1, 9, 0.5, -12, -0.5, 3, 0, 0, 1, 0;
    lp.b = Eigen::Vector3d(0, 0, 1);
    lp.lower = Eigen::VectorXd::Zero(4);
    lp.upper = Eigen::VectorXd::Constant(4, 100.0);
    const auto s = solve_lp(lp);
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK_THAT(s.objective, WithinAbs(1.25, 1e-9));
}

TEST_CASE("simplex needs phase one and detects infeasibility", "[headroom][lp]")
{
    LinearProgram lp;
    lp.c = Eigen::Vector2d(-1, -1);
    lp.a.resize(1, 2);
    lp.a << -1, -2;
    lp.b = Eigen::VectorXd::Constant(1, -4.0);
    lp.lower = Eigen::Vector2d(0, 0);
    lp.upper = Eigen::Vector2d(10, 10);
    const auto s = solve_lp(lp);
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK_THAT(s.objective, WithinAbs(-2.0, 1e-9));

    lp.b[0] = -40.0;
    CHECK(solve_lp(lp).status == LpStatus::Infeasible);
}

TEST_CASE("simplex agrees with vertex enumeration", "[headroom][lp]")
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    int solved = 0;
    for (int trial = 0; trial < 300; ++trial)
    {
        LinearProgram lp;
        lp.c = Eigen::Vector2d(u(rng), u(rng));
        lp.a.resize(4, 2);
        for (int i = 0; i < 4; ++i)
        {
            lp.a(i, 0) = u(rng);
            lp.a(i, 1) = u(rng);
        }
        lp.b = Eigen::Vector4d(u(rng), u(rng), u(rng), u(rng)) * 2.0;
        lp.lower = Eigen::Vector2d(-1.0 - u(rng) * 0.5, -1.0);
        lp.upper = Eigen::Vector2d(1.5, 1.0 + u(rng) * 0.5);
        bool any = false;
        const double best = vertex_enumeration(lp, any);
        const auto s = solve_lp(lp);
        if (!any)
        {
            CHECK(s.status == LpStatus::Infeasible);
            continue;
        }
        REQUIRE(s.status == LpStatus::Optimal);
        CHECK_THAT(s.objective, WithinAbs(best, 1e-8));
        CHECK(((lp.a * s.x - lp.b).array() <= 1e-8).all());
        ++solved;
    }
    CHECK(solved > 50);
}

TEST_CASE("rows that never bind inside the box leave the optimum unchanged", "[headroom][lp]")
{
    LinearProgram lp;
    lp.c = Eigen::Vector2d(3, 5);
    lp.a.resize(3, 2);
    lp.a << 1, 0, 0, 2, 3, 2;
    lp.b = Eigen::Vector3d(4, 12, 18);
    lp.lower = Eigen::Vector2d(0, 0);
    lp.upper = Eigen::Vector2d(10, 10);
    const auto base = solve_lp(lp);

    LinearProgram padded = lp;
    padded.a.resize(203, 2);
    padded.b.resize(203);
    padded.a.topRows(3) = lp.a;
    padded.b.head(3) = lp.b;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 3; i < 203; ++i)
    {
        padded.a(i, 0) = u(rng);
        padded.a(i, 1) = u(rng);
        // Slack at every corner of [0,10]^2.
        padded.b[i] = padded.a.row(i).cwiseMax(0.0).sum() * 10.0 + 0.5;
    }
    // Touches the corner (10, 10) but cannot cut the box.
    padded.a.row(202) << 1.0, 1.0;
    padded.b[202] = 20.0;
    const auto s = solve_lp(padded);
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK_THAT(s.objective, WithinAbs(base.objective, 1e-9));
    CHECK_THAT(s.x[0], WithinAbs(2.0, 1e-9));
    CHECK_THAT(s.x[1], WithinAbs(6.0, 1e-9));
    CHECK(s.pivots == base.pivots);
}

TEST_CASE("two-bus sensitivity matches the analytic derivative", "[headroom]")
{
    const Complex z(0.6, 1.2);
    const Complex load_kva(100.0, 30.0);
    const auto f = two_node_der(z, load_kva);
    OperatingPoint op;
    op.der_p_mw = {0.5};
    const auto vsm = build_vsm(f, op);
    REQUIRE(vsm.ok());
    REQUIRE(vsm.j.rows() == 3);

    // Per-phase net load in VA with the DER split over three phases.
    auto net = [&](double p_mw) { return load_kva * 1000.0 - Complex(p_mw * 1e6 / 3.0, 0.0); };
    const double h = 1e-6;
    const double exact = (closed_form_v2(f, z, net(0.5 + h)) - closed_form_v2(f, z, net(0.5 - h))) / (2.0 * h);
    const double v2 = closed_form_v2(f, z, net(0.5));
    const double r_pu = z.real() / (f.v_base() * f.v_base() / f.s_phase_base());
    const double approx = r_pu / v2 / (f.base_kva / 1000.0);
    for (int k = 0; k < 3; ++k)
    {
        CHECK_THAT(vsm.j(k, 0), WithinRel(exact, 1e-3));
        CHECK_THAT(vsm.j(k, 0), WithinRel(approx, 0.05));
    }
}

TEST_CASE("stiff feeder has zero sensitivity", "[headroom]")
{
    const auto f = two_node_der({0.0, 0.0}, {100.0, 30.0});
    OperatingPoint op;
    op.der_p_mw = {0.5};
    const auto vsm = build_vsm(f, op);
    CHECK(vsm.j.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward difference converges with the step", "[headroom]")
{
    const auto f = load_feeder(TDCOSIM_DATA_DIR "/feeders/teach6.yaml");
    OperatingPoint op;
    op.der_p_mw = {0.5, 0.5};
    VsmOptions a;
    a.delta_mw = 0.02;
    VsmOptions b;
    b.delta_mw = 0.01;
    VsmOptions c;
    c.delta_mw = 0.005;
    const auto ja = build_vsm(f, op, a).j;
    const auto jb = build_vsm(f, op, b).j;
    const auto jc = build_vsm(f, op, c).j;
    const double d1 = (ja - jb).cwiseAbs().maxCoeff();
    const double d2 = (jb - jc).cwiseAbs().maxCoeff();
    CHECK(d1 < 1e-3 * jb.cwiseAbs().maxCoeff());
    // First-order error: halving the step roughly halves the change.
    CHECK(d2 < 0.7 * d1);
    CHECK(d2 > 0.3 * d1);
}

TEST_CASE("capacity binds when voltage is slack", "[headroom]")
{
    const auto f = two_node_der({0.05, 0.1}, {100.0, 30.0});
    OperatingPoint op;
    op.der_p_mw = {0.5};
    HeadroomLimits lim;
    lim.p_cap = Eigen::VectorXd::Constant(1, 0.9);
    const auto res = solve_headroom_lp(build_vsm(f, op), lim);
    REQUIRE(res.status == LpStatus::Optimal);
    CHECK_THAT(res.headroom, WithinAbs(0.4, 1e-9));
    CHECK(std::find(res.binding.begin(), res.binding.end(), "capacity DER 0") != res.binding.end());
}

TEST_CASE("voltage at the upper bound leaves no headroom", "[headroom]")
{
    const auto f = two_node_der({0.6, 1.2}, {100.0, 30.0});
    OperatingPoint op;
    op.der_p_mw = {0.5};
    const auto vsm = build_vsm(f, op);
    REQUIRE(vsm.j(0, 0) > 0.0);
    HeadroomLimits lim;
    lim.p_cap = Eigen::VectorXd::Constant(1, 0.9);
    lim.v_hi = vsm.v_base.maxCoeff();
    const auto res = solve_headroom_lp(vsm, lim);
    REQUIRE(res.status == LpStatus::Optimal);
    CHECK_THAT(res.delta_p[0], WithinAbs(0.0, 1e-9));
    CHECK_THAT(res.headroom, WithinAbs(0.0, 1e-9));
}

TEST_CASE("violated base reports zero headroom", "[headroom]")
{
    const auto f = two_node_der({0.6, 1.2}, {100.0, 30.0});
    OperatingPoint op;
    op.der_p_mw = {0.5};
    HeadroomLimits lim;
    lim.p_cap = Eigen::VectorXd::Constant(1, 0.9);
    lim.v_hi = 0.9;
    const auto res = solve_headroom_lp(build_vsm(f, op), lim);
    CHECK(res.status == LpStatus::Infeasible);
    CHECK(res.headroom == 0.0);
    CHECK_FALSE(res.diagnostic.empty());
    const auto verified = compute_headroom(f, op, lim);
    CHECK(verified.result.headroom == 0.0);
}

TEST_CASE("feeder without DERs has zero headroom", "[headroom]")
{
    auto f = two_node_der({0.6, 1.2}, {100.0, 30.0});
    f.ders.clear();
    f.finalize();
    OperatingPoint op;
    HeadroomLimits lim;
    const auto res = solve_headroom_lp(build_vsm(f, op), lim);
    CHECK(res.headroom == 0.0);
}

TEST_CASE("linear feasibility and monotonicity on the teaching feeder", "[headroom]")
{
    const auto f = load_feeder(TDCOSIM_DATA_DIR "/feeders/teach6.yaml");
    OperatingPoint op;
    op.der_p_mw = {0.5, 0.5};
    const auto vsm = build_vsm(f, op);
    HeadroomLimits lim;
    lim.p_cap = Eigen::Vector2d(2.5, 2.5);
    double prev = -1.0;
    for (double v_hi = 1.03; v_hi <= 1.081; v_hi += 0.005)
    {
        lim.v_hi = v_hi;
        const auto res = solve_headroom_lp(vsm, lim);
        REQUIRE(res.status == LpStatus::Optimal);
        const Eigen::VectorXd v = vsm.v_base + vsm.j * res.delta_p;
        CHECK(v.maxCoeff() <= v_hi + 1e-6);
        CHECK(v.minCoeff() >= lim.v_lo - 1e-6);
        CHECK(res.headroom >= prev - 1e-12);
        prev = res.headroom;
    }
}

TEST_CASE("headroom matches exhaustive nonlinear search", "[headroom]")
{
    const auto f = load_feeder(TDCOSIM_DATA_DIR "/feeders/teach6.yaml");
    REQUIRE(f.ders.size() == 2);
    OperatingPoint op;
    op.der_p_mw = {f.ders[0].p_ref_mw, f.ders[1].p_ref_mw};
    HeadroomLimits lim;
    lim.p_cap = Eigen::Vector2d(f.ders[0].p_caps_mw, f.ders[1].p_caps_mw);

    const auto base = solve_feeder(f, op.v_sub_pu, op.der_p_mw);
    REQUIRE(feasible(f, base, lim.v_lo, lim.v_hi));

    const double step = 0.01;
    double best = -1.0;
    const int n1 = static_cast<int>(std::round(lim.p_cap[0] / step));
    const int n2 = static_cast<int>(std::round(lim.p_cap[1] / step));
    for (int a = 0; a <= n1; ++a)
    {
        for (int b = n2; b >= 0; --b)
        {
            const double total = (a + b) * step;
            if (total <= best)
            {
                break;
            }
            const std::vector<double> p = {a * step, b * step};
            const auto sol = solve_feeder(f, op.v_sub_pu, p);
            if (feasible(f, sol, lim.v_lo, lim.v_hi))
            {
                best = total;
                break;
            }
        }
    }
    const double brute = best - (op.der_p_mw[0] + op.der_p_mw[1]);
    REQUIRE(brute > 0.0);
    // The overvoltage limit must bind before capacity or the case is trivial.
    REQUIRE(best < lim.p_cap.sum() - 0.5);

    const auto h = compute_headroom(f, op, lim);
    REQUIRE(h.result.status == LpStatus::Optimal);
    CHECK_THAT(h.result.headroom, WithinRel(brute, 0.05));
    CHECK(h.worst_violation == 0.0);

    std::vector<double> p(h.result.p_opt.data(), h.result.p_opt.data() + 2);
    const auto check = solve_feeder(f, op.v_sub_pu, p);
    CHECK(feasible(f, check, lim.v_lo, lim.v_hi));
    CHECK(voltage_stats(f, check).max > 1.049);
}

TEST_CASE("refresh policy", "[headroom]")
{
    CHECK_FALSE(refresh_policy(9.9, 0.0));
    CHECK(refresh_policy(10.0, 0.0));
    CHECK(refresh_policy(0.0, std::nullopt));
    CHECK(refresh_policy(3.0, 3.0, 0.0));
    CHECK_FALSE(refresh_policy(19.0, 10.0));
    CHECK(refresh_policy(20.0, 10.0));
}
