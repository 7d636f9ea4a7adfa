#include "tdcosim/config_error.hpp"
#include "tdcosim/distribution/feeder.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

using namespace tdcosim::distribution;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace
{
    FeederBranch branch(std::size_t from, std::size_t to, Complex self, Complex mutual = {}, PhaseMask ph = kPhaseABC)
    {
        FeederBranch b;
        b.from = from;
        b.to = to;
        b.phases = ph;
        b.z.setConstant(mutual);
        b.z.diagonal().setConstant(self);
        for (int r = 0; r < 3; ++r)
        {
            for (int c = 0; c < 3; ++c)
            {
                if (!has_phase(ph, r) || !has_phase(ph, c))
                {
                    b.z(r, c) = 0.0;
                }
            }
        }
        return b;
    }

    FeederLoad load(std::size_t node, PhaseArray kva)
    {
        return {node, kva};
    }

    FeederNetwork two_node(Complex z_ohm, Complex s_phase_kva)
    {
        FeederNetwork f;
        f.name = "two";
        f.base_kv = 12.47;
        f.base_kva = 3000.0;
        f.nodes = {{"sub", kPhaseABC}, {"n1", kPhaseABC}};
        f.branches = {branch(0, 1, z_ohm)};
        f.loads = {load(1, {s_phase_kva, s_phase_kva, s_phase_kva})};
        f.finalize();
        return f;
    }

    // Five nodes, coupled impedances, an unbalanced lateral and two DERs.
    FeederNetwork small_feeder()
    {
        FeederNetwork f;
        f.name = "small";
        f.base_kv = 12.47;
        f.base_kva = 5000.0;
        f.nodes = {{"sub", kPhaseABC}, {"n1", kPhaseABC}, {"n2", kPhaseABC}, {"n3", kPhaseA | kPhaseC}, {"n4", kPhaseB}};
        const Complex self(0.35, 0.75);
        const Complex mutual(0.12, 0.35);
        f.branches = {branch(0, 1, self, mutual), branch(1, 2, self * 0.8, mutual * 0.8),
                      branch(1, 3, self * 1.3, mutual * 1.3, kPhaseA | kPhaseC), branch(4, 2, self * 2.0, {}, kPhaseB)};
        f.loads = {load(1, {{{300, 90}, {280, 100}, {310, 80}}}), load(2, {{{400, 150}, {350, 120}, {420, 160}}}),
                   load(3, {{{200, 60}, {0, 0}, {150, 50}}}), load(4, {{{0, 0}, {180, 70}, {0, 0}}})};
        FeederDer a;
        a.id = "pv_a";
        a.node = 2;
        a.phases = kPhaseABC;
        a.p_caps_mw = 0.9;
        a.p_ref_mw = 0.5;
        FeederDer b = a;
        b.id = "pv_b";
        b.node = 3;
        b.phases = kPhaseA | kPhaseC;
        f.ders = {a, b};
        f.finalize();
        return f;
    }

    // Complex power delivered into the network from the source minus branch losses.
    Complex total_losses_va(const FeederNetwork &f, const FeederSolution &sol)
    {
        Complex loss(0.0, 0.0);
        for (std::size_t k = 0; k < f.branches.size(); ++k)
        {
            const auto &br = f.branches[k];
            for (std::size_t p = 0; p < 3; ++p)
            {
                loss += (sol.v[br.from][p] - sol.v[br.to][p]) * std::conj(sol.i[k][p]);
            }
        }
        return loss;
    }
} // namespace

TEST_CASE("phase parsing", "[distribution]")
{
    CHECK(parse_phases("abc") == kPhaseABC);
    CHECK(parse_phases("ca") == (kPhaseA | kPhaseC));
    CHECK(phase_string(kPhaseB | kPhaseC) == "bc");
    CHECK(phase_count(kPhaseA | kPhaseC) == 2);
    CHECK_THROWS_AS(parse_phases("ad"), DistributionError);
    CHECK_THROWS_AS(parse_phases(""), DistributionError);
}

TEST_CASE("two-node feeder matches the closed-form voltage", "[distribution]")
{
    const Complex z(0.8, 1.6);
    const Complex s_kva(900.0, 300.0);
    const auto f = two_node(z, s_kva);
    const double zero = 0.0;
    const auto sol = solve_feeder(f, {1.0, 0.0}, std::span<const double>(&zero, 0));

    const double v1 = f.v_base();
    const Complex s = s_kva * 1000.0;
    const double a = v1 * v1 - 2.0 * (z.real() * s.real() + z.imag() * s.imag());
    const double v2sq = (a + std::sqrt(a * a - 4.0 * std::norm(z) * std::norm(s))) / 2.0;
    const double v2 = std::sqrt(v2sq);
    const double theta = -std::arg(v2sq + z * std::conj(s));
    for (int ph = 0; ph < 3; ++ph)
    {
        CHECK_THAT(sol.v_pu(1, ph), WithinAbs(v2 / v1, 1e-9));
    }
    CHECK_THAT(std::arg(sol.v[1][0]), WithinAbs(theta, 1e-9));
    CHECK(sol.iterations < 20);
    CHECK_FALSE(sol.used_ybus);
}

TEST_CASE("zero load reproduces the source", "[distribution]")
{
    auto f = small_feeder();
    f.loads.clear();
    f.finalize();
    const std::vector<double> der = {0.0, 0.0};
    const auto sol = solve_feeder(f, std::polar(1.02, 0.1), der);
    const auto src = balanced_source(std::polar(1.02, 0.1));
    for (std::size_t i = 0; i < f.nodes.size(); ++i)
    {
        for (int ph = 0; ph < 3; ++ph)
        {
            if (has_phase(f.nodes[i].phases, ph))
            {
                CHECK(std::abs(sol.v[i][static_cast<std::size_t>(ph)] / f.v_base() - src[static_cast<std::size_t>(ph)]) <
                      1e-12);
            }
        }
    }
    CHECK(std::abs(positive_sequence_mva(sol.s_abc)) < 1e-12);
}

TEST_CASE("balanced feeder gives symmetric phases", "[distribution]")
{
    const auto f = two_node({0.5, 1.1}, {500.0, 200.0});
    const double zero = 0.0;
    const auto sol = solve_feeder(f, {1.0, 0.0}, std::span<const double>(&zero, 0));
    CHECK_THAT(sol.v_pu(1, 0), WithinAbs(sol.v_pu(1, 1), 1e-12));
    CHECK_THAT(sol.v_pu(1, 0), WithinAbs(sol.v_pu(1, 2), 1e-12));
    CHECK(std::abs(sol.s_abc[0] - sol.s_abc[1]) < 1e-9);
    const double shift = std::arg(sol.v[1][0] / sol.v[1][1]);
    CHECK_THAT(shift, WithinAbs(2.0 * std::numbers::pi / 3.0, 1e-12));
}

TEST_CASE("substation power equals load plus losses minus generation", "[distribution]")
{
    const auto f = small_feeder();
    const std::vector<double> der = {0.6, 0.3};
    const auto sol = solve_feeder(f, {1.01, 0.0}, der);

    Complex load_va(0.0, 0.0);
    for (const auto &l : f.loads)
    {
        for (const auto &s : l.s_kva)
        {
            load_va += s * 1000.0;
        }
    }
    const Complex gen_va = (der[0] + der[1]) * 1e6;
    const Complex lhs = positive_sequence_mva(sol.s_abc) * 1e6;
    const Complex rhs = load_va - gen_va + total_losses_va(f, sol);
    CHECK(std::abs(lhs - rhs) / std::abs(load_va) < 1e-7);
    CHECK(std::abs(positive_sequence_mva(sol.s_gross) - positive_sequence_mva(sol.s_abc) - Complex(0.9, 0.0)) < 1e-12);
}

TEST_CASE("load scaling raises drop and substation power", "[distribution]")
{
    const auto f = small_feeder();
    const std::vector<double> der = {0.0, 0.0};
    const auto base = solve_feeder(f, {1.0, 0.0}, der, 1.0);
    const auto heavy = solve_feeder(f, {1.0, 0.0}, der, 1.2);
    CHECK(heavy.s_abc[0].real() > base.s_abc[0].real() * 1.19);
    CHECK(voltage_stats(f, heavy).min < voltage_stats(f, base).min);
}

TEST_CASE("positive-sequence aggregation", "[distribution]")
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial < 200; ++trial)
    {
        const PhaseArray s = {Complex(u(rng), u(rng)), Complex(u(rng), u(rng)), Complex(u(rng), u(rng))};
        const Complex mean = (s[0] + s[1] + s[2]) / 3.0;
        CHECK(std::abs(aggregate_positive_sequence(s) - mean) < 1e-12);
        CHECK(std::abs(positive_sequence_mva(s) - (s[0] + s[1] + s[2])) < 1e-12);
    }
    const PhaseArray ex = {Complex(0.3, 0.1), Complex(0.3, 0.1), Complex(0.3, 0.1)};
    CHECK(std::abs(aggregate_positive_sequence(ex) - Complex(0.3, 0.1)) < 1e-15);
}

TEST_CASE("DER output offsets the substation load", "[distribution]")
{
    const auto f = small_feeder();
    const std::vector<double> none = {0.0, 0.0};
    const std::vector<double> some = {0.5, 0.0};
    const auto a = solve_feeder(f, {1.0, 0.0}, none);
    const auto b = solve_feeder(f, {1.0, 0.0}, some);
    const double dp = positive_sequence_mva(a.s_abc).real() - positive_sequence_mva(b.s_abc).real();
    // Losses fall as well, so the reduction is slightly larger than the injection.
    CHECK(dp > 0.5);
    CHECK(dp < 0.52);
}

TEST_CASE("sweep and admittance solver agree", "[distribution]")
{
    const auto f = small_feeder();
    const std::vector<double> der = {0.4, 0.2};
    SolveOptions y;
    y.force_ybus = true;
    const auto a = solve_feeder(f, std::polar(1.03, -0.05), der);
    const auto b = solve_feeder(f, std::polar(1.03, -0.05), der, 1.0, y);
    CHECK(b.used_ybus);
    for (std::size_t i = 0; i < f.nodes.size(); ++i)
    {
        for (std::size_t p = 0; p < 3; ++p)
        {
            CHECK(std::abs(a.v[i][p] - b.v[i][p]) / f.v_base() < 1e-7);
        }
    }
    for (std::size_t p = 0; p < 3; ++p)
    {
        CHECK(std::abs(a.s_abc[p] - b.s_abc[p]) < 1e-6);
    }
}

TEST_CASE("meshed feeder uses the admittance solver", "[distribution]")
{
    auto f = small_feeder();
    f.branches.push_back(branch(2, 3, {1.0, 2.0}, {}, kPhaseA | kPhaseC));
    f.finalize();
    CHECK_FALSE(f.radial());
    const std::vector<double> der = {0.0, 0.0};
    const auto sol = solve_feeder(f, {1.0, 0.0}, der);
    CHECK(sol.used_ybus);
    // Current balance at n3: inflow on both branches equals the load current.
    const Complex in = sol.i[2][0] + sol.i[4][0];
    const Complex load_i = std::conj(Complex(200e3, 60e3) / sol.v[3][0]);
    CHECK(std::abs(in - load_i) / std::abs(load_i) < 1e-6);
}

TEST_CASE("warm start converges in fewer sweeps", "[distribution]")
{
    const auto f = small_feeder();
    const std::vector<double> der = {0.2, 0.1};
    const auto cold = solve_feeder(f, {1.0, 0.0}, der);
    const auto warm = solve_feeder(f, {1.0, 0.0}, der, 1.0, {}, &cold);
    CHECK(warm.iterations < cold.iterations);
    CHECK(std::abs(warm.v[2][1] - cold.v[2][1]) / f.v_base() < 1e-8);
}

TEST_CASE("nonconvergence on an impossible load", "[distribution]")
{
    const auto f = two_node({5.0, 10.0}, {40000.0, 10000.0});
    const double zero = 0.0;
    try
    {
        solve_feeder(f, {1.0, 0.0}, std::span<const double>(&zero, 0));
        FAIL("expected NonConvergence");
    }
    catch (const DistributionError &e)
    {
        CHECK(e.code() == DistributionError::Code::NonConvergence);
    }
}

TEST_CASE("limit checks", "[distribution]")
{
    auto f = two_node({2.0, 4.0}, {900.0, 300.0});
    f.branches[0].ampacity = 50.0;
    f.finalize();
    const double zero = 0.0;
    const auto sol = solve_feeder(f, {1.0, 0.0}, std::span<const double>(&zero, 0));
    const auto vs = check_limits(f, sol);
    int under = 0;
    int thermal = 0;
    for (const auto &v : vs)
    {
        under += v.kind == Violation::Kind::UnderVoltage;
        thermal += v.kind == Violation::Kind::Thermal;
    }
    CHECK(sol.v_pu(1, 0) < 0.95);
    CHECK(under == 3);
    CHECK(thermal == 3);
    CHECK(check_limits(f, sol, 0.5, 1.5).size() == 3);
}

TEST_CASE("voltage statistics", "[distribution]")
{
    const auto f = small_feeder();
    const std::vector<double> der = {0.0, 0.0};
    const auto sol = solve_feeder(f, {1.0, 0.0}, der);
    const auto st = voltage_stats(f, sol);
    CHECK(st.count == 3 + 3 + 3 + 2 + 1);
    CHECK(st.min <= st.mean);
    CHECK(st.mean <= st.max);
    CHECK_THAT(st.max, WithinAbs(1.0, 1e-12));
    CHECK(st.std > 0.0);
}

TEST_CASE("feeder validation", "[distribution]")
{
    FeederNetwork f;
    f.name = "bad";
    f.nodes = {{"sub", kPhaseABC}, {"n1", kPhaseABC}, {"n2", kPhaseABC}};
    f.branches = {branch(0, 1, {1.0, 1.0})};
    CHECK_THROWS_WITH(f.finalize(), Catch::Matchers::ContainsSubstring("not connected"));

    f.branches.push_back(branch(1, 2, {1.0, 1.0}, {}, kPhaseA));
    CHECK_THROWS_WITH(f.finalize(), Catch::Matchers::ContainsSubstring("differ from its supply"));

    f.nodes[2].phases = kPhaseA;
    f.finalize();
    f.loads = {load(2, {{{0, 0}, {10, 0}, {0, 0}}})};
    CHECK_THROWS_WITH(f.finalize(), Catch::Matchers::ContainsSubstring("missing phase b"));
}

TEST_CASE("feeder file loading", "[distribution]")
{
    const auto dir = std::filesystem::temp_directory_path() / "tdcosim_feeder_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "mini.yaml";
    {
        std::ofstream out(path);
        out << "name: mini\n"
               "base_kv: 12.47\n"
               "base_kva: 3000\n"
               "substation: {node: sub, tap: 1.02}\n"
               "linecodes:\n"
               "  lc: {r: 0.3, x: 0.6, r_mutual: 0.1, x_mutual: 0.2, ampacity: 400}\n"
               "nodes:\n"
               "  - {id: sub}\n"
               "  - {id: n1}\n"
               "  - {id: n2, phases: a}\n"
               "branches:\n"
               "  - {from: sub, to: n1, linecode: lc, length: 2.0}\n"
               "  - {from: n1, to: n2, r: 0.5, x: 0.9}\n"
               "loads:\n"
               "  - {node: n1, kw: 900, kvar: 300}\n"
               "  - {node: n2, kw: [120], kvar: [40]}\n"
               "ders:\n"
               "  - {id: pv1, node: n1, p_caps_mw: 0.9, p_ref_mw: 0.5, mppt_file: pv1.csv}\n";
    }
    const auto f = load_feeder(path);
    CHECK(f.name == "mini");
    CHECK(f.source_tap == 1.02);
    CHECK(f.nodes[2].phases == kPhaseA);
    CHECK(f.branches[0].z(0, 1) == Complex(0.2, 0.4));
    CHECK(f.branches[0].ampacity == 400.0);
    CHECK(f.branches[1].phases == kPhaseA);
    CHECK(f.node_load_kva[1][2] == Complex(300.0, 100.0));
    CHECK(f.node_load_kva[2][0] == Complex(120.0, 40.0));
    CHECK_THAT(f.total_load_kw(), WithinRel(1020.0, 1e-12));
    CHECK(f.ders[0].mppt_file == dir / "pv1.csv");
    CHECK_FALSE(f.ders[0].tg.has_value());

    {
        std::ofstream out(path);
        out << "name: mini\nbase_kv: 12.47\nbase_kva: 3000\nsubstation: {node: sub}\n"
               "nodes:\n  - {id: sub}\nbranches:\n  - {from: sub, to: nowhere, r: 1, x: 1}\n";
    }
    CHECK_THROWS_WITH(load_feeder(path), Catch::Matchers::ContainsSubstring("mini.yaml:8: unknown node 'nowhere'"));
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_feeder(path), tdcosim::ConfigError);
}
