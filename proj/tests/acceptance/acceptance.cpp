// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.
#include "../unit/grid_fixtures.hpp"

#include "tdcosim/distribution/feeder.hpp"
#include "tdcosim/headroom/vsm.hpp"
#include "tdcosim/scenario/scenario.hpp"
#include "tdcosim/transmission/simulator.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
namespace sc = tdcosim::scenario;
namespace dist = tdcosim::distribution;
namespace hr = tdcosim::headroom;
namespace cosim = tdcosim::cosim;
using namespace tdcosim::transmission;

namespace
{
    const fs::path kData = TDCOSIM_DATA_DIR;

    struct Outcome
    {
        bool pass = false;
        std::string detail;
    };

    double wall(const std::function<void()> &f)
    {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    sc::Scenario scenario(const std::string &name)
    {
        return sc::load_scenario(kData / "scenarios" / (name + ".yaml"));
    }

    std::vector<fs::path> shipped(const fs::path &dir)
    {
        std::vector<fs::path> out;
        for (const auto &e : fs::directory_iterator(dir))
        {
            if (e.path().extension() == ".yaml")
            {
                out.push_back(e.path());
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    bool on_grid(cosim::Time t, double period) { return t.count() % cosim::from_seconds(period).count() == 0; }

    Outcome droop_settling()
    {
        double expected = 0.0;
        double measured = 0.0;
        const double secs = wall([&] {
            TransmissionSystem sys(fixtures::three_machine(LoadModel::ConstantPower, 0.0));
            // 0.1 pu of generation lost on g2.
            sys.schedule(Event{EventKind::SetpointChange, 1.0, "g2", 0, -10.0});
            sys.initialize();
            sys.advance_to(60.0);
            double inv_r = 0.0;
            double d = 0.0;
            for (const auto &g : sys.grid().generators)
            {
                inv_r += 1.0 / g.governor.droop;
                d += g.damping;
            }
            expected = -0.1 / (inv_r + d);
            measured = sys.coi_frequency() / 60.0 - 1.0;
        });
        const double rel = std::abs(measured - expected) / std::abs(expected);
        return {rel <= 0.01 && secs < 5.0,
                fmt::format("deviation {:.6e} pu vs {:.6e} pu (rel err {:.2e}), {:.2f} s", measured, expected, rel, secs)};
    }

    Outcome agc_restoration()
    {
        const auto with = sc::run(scenario("trip_agc"));
        const auto without = sc::run(scenario("trip_noagc"));
        const double f_with = with.freq_hz.back();
        const double f_without = without.freq_hz.back();
        const double db = scenario("trip_agc").agc.area.deadband;
        // Without AGC the frequency must also have settled: compare the last 5 s.
        const double drift = std::abs(f_without - without.freq_hz[without.freq_hz.size() - 51]);
        const bool pass = with.t.back() == 60.0 && std::abs(f_with - 60.0) <= db && f_without <= 60.0 - 0.03 &&
                          drift < 1e-3;
        return {pass, fmt::format("f(60) with AGC {:.5f} Hz (band {}), without {:.5f} Hz (drift over last 5 s {:.1e} Hz)",
                                  f_with, db, f_without, drift)};
    }

    Outcome der_limits()
    {
        std::size_t checked = 0;
        std::size_t bad = 0;
        double worst = 0.0;
        std::string where;
        std::size_t runs = 0;
        for (const auto &path : shipped(kData / "scenarios"))
        {
            auto s = sc::load_scenario(path);
            s.log_dt = s.cadences.internal_dt; // one sample per internal step
            const auto r = sc::run(s);
            ++runs;
            std::map<std::string, std::pair<double, double>> caps_tg;
            for (const auto &net : s.networks)
            {
                for (const auto &d : net.ders)
                {
                    caps_tg[d.id] = {d.p_caps_mw, d.tg.value_or(s.der_defaults.tg)};
                }
            }
            for (const auto &trace : r.ders)
            {
                const auto [caps, tg] = caps_tg.at(trace.id);
                for (std::size_t k = 1; k < trace.samples.size(); ++k)
                {
                    const auto &now = trace.samples[k];
                    const double prev = trace.samples[k - 1].p_out;
                    const double limit = std::max(0.0, std::min({now.p_mppt, caps, now.vsm_limit}));
                    const double dt = s.cadences.internal_dt;
                    const double allowance = (1.0 - dt / tg) * std::max(0.0, prev - limit) + 1e-9;
                    const double excess = now.p_out - limit - allowance;
                    ++checked;
                    if (excess > 0.0)
                    {
                        ++bad;
                        if (excess > worst)
                        {
                            worst = excess;
                            where = fmt::format("{} {} at {} s", s.name, trace.id, now.t);
                        }
                    }
                }
            }
        }
        return {bad == 0 && checked > 0 && runs >= 5,
                fmt::format("{} scenarios, {} DER steps checked, {} over the limit{}", runs, checked, bad,
                            bad ? fmt::format(" (worst {:.3e} MW, {})", worst, where) : std::string())};
    }

    Outcome cadence()
    {
        const auto s = scenario("noise_agc");
        const auto r = sc::run(s);
        const auto &log = r.federation_log;
        std::vector<std::string> problems;

        // AGC signal is piecewise constant on the 4 s grid.
        for (const auto *e : log.publications("agc_setpoint."))
        {
            if (!on_grid(e->time, s.cadences.agc_period))
            {
                problems.push_back(fmt::format("{} published at {} s", e->topic, cosim::to_seconds(e->time)));
            }
        }
        std::size_t agc_updates = 0;
        for (std::size_t k = 1; k < r.agc_signal_mw.size(); ++k)
        {
            if (r.agc_signal_mw[k] != r.agc_signal_mw[k - 1])
            {
                ++agc_updates;
                if (!on_grid(cosim::from_seconds(r.t_ace[k]), s.cadences.agc_period))
                {
                    problems.push_back(fmt::format("AGC signal changed at {} s", r.t_ace[k]));
                }
            }
        }
        if (agc_updates == 0)
        {
            problems.push_back("AGC signal never changed");
        }

        // Topic publication times must be exactly the expected grid, once per mark.
        const auto expect_grid = [&](const std::string &topic, double period) {
            std::vector<std::int64_t> got;
            for (const auto *e : log.publications(topic))
            {
                if (e->topic == topic)
                {
                    got.push_back(e->time.count());
                }
            }
            std::vector<std::int64_t> want;
            for (std::int64_t k = 0; k * period <= s.stop_time + 1e-9; ++k)
            {
                want.push_back(cosim::from_seconds(static_cast<double>(k) * period).count());
            }
            // The value published at stop_time is never routed, so it may be absent.
            if (got.size() + 1 == want.size())
            {
                want.pop_back();
            }
            if (got != want)
            {
                problems.push_back(fmt::format("{}: {} publications, expected {} on the {} s grid", topic, got.size(),
                                               want.size(), period));
            }
        };
        for (const auto &f : s.feeders)
        {
            expect_grid(fmt::format("boundary_power.{}", f.bus), s.cadences.td_exchange);
            expect_grid(fmt::format("boundary_voltage.{}", f.bus), s.cadences.td_exchange);
        }
        expect_grid("freq_hz", s.cadences.meas_out);

        if (std::abs(r.internal_dt - 1.0 / 30.0) > 1e-15 || r.internal_steps != std::lround(s.stop_time * 30.0))
        {
            problems.push_back(fmt::format("internal dt {} with {} steps", r.internal_dt, r.internal_steps));
        }
        for (const auto t : log.grants("transmission"))
        {
            if (!on_grid(t, s.cadences.meas_out))
            {
                problems.push_back(fmt::format("transmission granted at {} s", cosim::to_seconds(t)));
            }
        }
        return {problems.empty(), problems.empty()
                                      ? fmt::format("{} AGC updates on the 4 s grid, exchange topics on 1 s and 0.5 s "
                                                    "marks, {} internal steps of 1/30 s",
                                                    agc_updates, r.internal_steps)
                                      : problems.front() + fmt::format(" (+{} more)", problems.size() - 1)};
    }

    Outcome positive_sequence()
    {
        std::mt19937_64 rng(2024);
        std::uniform_real_distribution<double> u(-50.0, 50.0);
        double worst = 0.0;
        for (int trial = 0; trial < 10000; ++trial)
        {
            dist::PhaseArray s{};
            for (auto &x : s)
            {
                x = {u(rng), u(rng)};
            }
            const auto agg = dist::aggregate_positive_sequence(s);
            const dist::Complex mean = (s[0] + s[1] + s[2]) / 3.0;
            worst = std::max(worst, std::abs(agg - mean));
        }
        return {worst <= 1e-12, fmt::format("max |aggregate - mean| {:.2e} over 10000 random triples", worst)};
    }

    bool voltages_ok(const dist::FeederNetwork &f, const dist::FeederSolution &sol, double lo, double hi)
    {
        for (std::size_t i = 0; i < f.nodes.size(); ++i)
        {
            for (int ph = 0; ph < 3; ++ph)
            {
                if (i != f.substation && dist::has_phase(f.nodes[i].phases, ph))
                {
                    const double v = sol.v_pu(i, ph);
                    if (v < lo || v > hi)
                    {
                        return false;
                    }
                }
            }
        }
        return true;
    }

    Outcome headroom_brute_force()
    {
        const auto f = dist::load_feeder(kData / "feeders" / "teach6.yaml");
        if (f.ders.size() != 2)
        {
            return {false, "teach6 does not have two DERs"};
        }
        hr::OperatingPoint op;
        op.der_p_mw = {f.ders[0].p_ref_mw, f.ders[1].p_ref_mw};
        hr::HeadroomLimits lim;
        lim.p_cap = Eigen::Vector2d(f.ders[0].p_caps_mw, f.ders[1].p_caps_mw);
        lim.current_limits = false;

        // Every point of the 10 kW grid over [0, cap] x [0, cap].
        const double step = 0.01;
        const int n1 = static_cast<int>(std::lround(lim.p_cap[0] / step));
        const int n2 = static_cast<int>(std::lround(lim.p_cap[1] / step));
        double best = -1.0;
        for (int a = 0; a <= n1; ++a)
        {
            for (int b = 0; b <= n2; ++b)
            {
                const std::vector<double> p = {a * step, b * step};
                if (voltages_ok(f, dist::solve_feeder(f, op.v_sub_pu, p), lim.v_lo, lim.v_hi))
                {
                    best = std::max(best, (a + b) * step);
                }
            }
        }
        const double brute = best - op.der_p_mw[0] - op.der_p_mw[1];
        const auto h = hr::compute_headroom(f, op, lim);
        std::vector<double> p(h.result.p_opt.data(), h.result.p_opt.data() + 2);
        const bool clean = voltages_ok(f, dist::solve_feeder(f, op.v_sub_pu, p), lim.v_lo, lim.v_hi);
        const double rel = std::abs(h.result.headroom - brute) / brute;
        const bool pass = h.result.status == hr::LpStatus::Optimal && brute > 0.0 && rel <= 0.05 && clean &&
                          best < lim.p_cap.sum() - 1e-9;
        return {pass, fmt::format("LP {:.4f} MW vs exhaustive {:.4f} MW (rel {:.2e}); LP point {} nonlinearly",
                                  h.result.headroom, brute, rel, clean ? "feasible" : "VIOLATES limits")};
    }

    Outcome voltage_envelope(const sc::RunResults &r)
    {
        double lo = 1e9;
        double hi = -1e9;
        std::size_t samples = 0;
        for (const auto &f : r.feeders)
        {
            for (const auto &v : f.voltage)
            {
                lo = std::min(lo, v.stats.min);
                hi = std::max(hi, v.stats.max);
                ++samples;
            }
        }
        return {lo >= 0.95 && hi <= 1.05 && samples >= 2 * 61 && r.t.back() == 60.0,
                fmt::format("node voltages in [{:.5f}, {:.5f}] pu over {} feeder solves", lo, hi, samples)};
    }

    Outcome frequency_statistics(const sc::RunResults &r)
    {
        // Recomputed here rather than trusting the summary.
        double sum = 0.0;
        for (const double f : r.freq_hz)
        {
            sum += f;
        }
        const double mean = sum / static_cast<double>(r.freq_hz.size());
        double sq = 0.0;
        for (const double f : r.freq_hz)
        {
            sq += (f - mean) * (f - mean);
        }
        const double sd = std::sqrt(sq / static_cast<double>(r.freq_hz.size()));
        return {std::abs(mean - 60.0) <= 0.01 && sd <= 0.05 && r.t.back() == 60.0,
                fmt::format("mean {:.5f} Hz, std {:.5f} Hz over {} samples", mean, sd, r.freq_hz.size())};
    }

    Outcome performance()
    {
        const auto reference = scenario("noise_agc");
        const auto scale = scenario("scale10");
        // Best of three to keep scheduler noise out of the ratio.
        double t_ref = 1e9;
        double t_scale = 1e9;
        for (int k = 0; k < 3; ++k)
        {
            t_ref = std::min(t_ref, wall([&] { (void)sc::run(reference); }));
            t_scale = std::min(t_scale, wall([&] { (void)sc::run(scale); }));
        }
        return {t_ref <= 30.0 && t_scale <= 3.0 * t_ref,
                fmt::format("60 s reference run {:.2f} s wall, 10-feeder run {:.2f} s ({:.2f}x)", t_ref, t_scale,
                            t_scale / t_ref)};
    }

    std::map<std::string, std::string> csv_bytes(const fs::path &dir)
    {
        std::map<std::string, std::string> out;
        for (const auto &e : fs::directory_iterator(dir))
        {
            if (e.path().filename() == "run_time.txt")
            {
                continue;
            }
            std::ifstream in(e.path(), std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            out[e.path().filename().string()] = ss.str();
        }
        return out;
    }

    Outcome determinism()
    {
        const auto root = fs::temp_directory_path() / "tdcosim_acceptance_determinism";
        fs::remove_all(root);
        std::size_t files = 0;
        std::vector<std::string> differing;
        for (const auto &path : shipped(kData / "scenarios"))
        {
            const auto s = sc::load_scenario(path);
            const auto a = root / (s.name + "_a");
            const auto b = root / (s.name + "_b");
            sc::emit_outputs(sc::run(s), a);
            sc::emit_outputs(sc::run(s), b);
            const auto fa = csv_bytes(a);
            const auto fb = csv_bytes(b);
            files += fa.size();
            if (fa != fb)
            {
                differing.push_back(s.name);
            }
        }
        // Parallel and sequential feeder execution must agree too.
        auto seq = scenario("scale10");
        seq.execution = cosim::Execution::Sequential;
        auto par = seq;
        par.execution = cosim::Execution::Parallel;
        sc::emit_outputs(sc::run(seq), root / "scale10_seq");
        sc::emit_outputs(sc::run(par), root / "scale10_par");
        if (csv_bytes(root / "scale10_seq") != csv_bytes(root / "scale10_par"))
        {
            differing.push_back("scale10 sequential vs parallel");
        }
        fs::remove_all(root);
        return {differing.empty() && files > 0,
                differing.empty() ? fmt::format("{} output files byte-identical across repeated runs", files)
                                  : "differs: " + differing.front()};
    }

    // Worst KVL and per-node power mismatch of a solution, pu.
    std::pair<double, double> mismatch(const dist::FeederNetwork &f, const dist::FeederSolution &sol,
                                       std::span<const double> der_p)
    {
        const double vb = f.v_base();
        const double sb = f.base_kva * 1000.0 / 3.0;
        double kvl = 0.0;
        std::vector<dist::PhaseArray> inflow(f.nodes.size(), dist::PhaseArray{});
        for (std::size_t k = 0; k < f.branches.size(); ++k)
        {
            const auto &br = f.branches[k];
            for (int r = 0; r < 3; ++r)
            {
                if (!dist::has_phase(br.phases, r))
                {
                    continue;
                }
                dist::Complex drop(0.0, 0.0);
                for (int c = 0; c < 3; ++c)
                {
                    drop += br.z(r, c) * sol.i[k][static_cast<std::size_t>(c)];
                }
                const auto ur = static_cast<std::size_t>(r);
                kvl = std::max(kvl, std::abs(sol.v[br.from][ur] - drop - sol.v[br.to][ur]) / vb);
                inflow[br.to][ur] += sol.i[k][ur];
                inflow[br.from][ur] -= sol.i[k][ur];
            }
        }
        std::vector<dist::PhaseArray> demand(f.nodes.size(), dist::PhaseArray{});
        for (const auto &l : f.loads)
        {
            for (std::size_t p = 0; p < 3; ++p)
            {
                demand[l.node][p] += l.s_kva[p] * 1000.0;
            }
        }
        for (std::size_t k = 0; k < f.ders.size(); ++k)
        {
            const auto &d = f.ders[k];
            int n = 0;
            for (int ph = 0; ph < 3; ++ph)
            {
                n += dist::has_phase(d.phases, ph) ? 1 : 0;
            }
            for (int ph = 0; ph < 3; ++ph)
            {
                if (dist::has_phase(d.phases, ph))
                {
                    demand[d.node][static_cast<std::size_t>(ph)] -= der_p[k] * 1e6 / n;
                }
            }
        }
        double power = 0.0;
        for (std::size_t i = 0; i < f.nodes.size(); ++i)
        {
            if (i == f.substation)
            {
                continue;
            }
            for (int ph = 0; ph < 3; ++ph)
            {
                if (dist::has_phase(f.nodes[i].phases, ph))
                {
                    const auto p = static_cast<std::size_t>(ph);
                    const dist::Complex s = sol.v[i][p] * std::conj(inflow[i][p]);
                    power = std::max(power, std::abs(s - demand[i][p]) / sb);
                }
            }
        }
        return {kvl, power};
    }

    Outcome distribution_solver()
    {
        double worst_kvl = 0.0;
        double worst_power = 0.0;
        int worst_sweeps = 0;
        std::vector<std::string> names;
        bool all_sweep = true;
        for (const auto &path : shipped(kData / "feeders"))
        {
            const auto f = dist::load_feeder(path);
            names.push_back(f.name);
            for (const double mult : {0.5, 1.0, 1.1})
            {
                for (const double share : {0.0, 1.0})
                {
                    std::vector<double> p;
                    for (const auto &d : f.ders)
                    {
                        p.push_back(share * d.p_caps_mw);
                    }
                    const auto sol = dist::solve_feeder(f, dist::Complex(f.source_tap, 0.0), p, mult);
                    all_sweep = all_sweep && !sol.used_ybus;
                    worst_sweeps = std::max(worst_sweeps, sol.iterations);
                    // The loads were scaled by mult, so the oracle uses a scaled copy.
                    auto scaled = f;
                    for (auto &l : scaled.loads)
                    {
                        for (auto &s : l.s_kva)
                        {
                            s *= mult;
                        }
                    }
                    const auto [kvl, power] = mismatch(scaled, sol, p);
                    worst_kvl = std::max(worst_kvl, kvl);
                    worst_power = std::max(worst_power, power);
                }
            }
        }

        // Two buses, balanced load: closed-form receiving voltage.
        dist::FeederNetwork two;
        two.name = "two";
        two.base_kv = 12.47;
        two.base_kva = 3000.0;
        two.nodes = {{"sub", dist::kPhaseABC}, {"n1", dist::kPhaseABC}};
        dist::FeederBranch br;
        br.from = 0;
        br.to = 1;
        br.phases = dist::kPhaseABC;
        const dist::Complex z(0.8, 1.6);
        br.z.setZero();
        br.z.diagonal().setConstant(z);
        two.branches = {br};
        const dist::Complex s_kva(900.0, 300.0);
        two.loads = {{1, {s_kva, s_kva, s_kva}}};
        two.finalize();
        const auto sol = dist::solve_feeder(two, {1.0, 0.0}, std::span<const double>());
        const double v1 = two.v_base();
        const dist::Complex s = s_kva * 1000.0;
        const double a = v1 * v1 - 2.0 * (z.real() * s.real() + z.imag() * s.imag());
        const double v2 = std::sqrt((a + std::sqrt(a * a - 4.0 * std::norm(z) * std::norm(s))) / 2.0);
        double two_err = 0.0;
        for (int ph = 0; ph < 3; ++ph)
        {
            two_err = std::max(two_err, std::abs(sol.v_pu(1, ph) - v2 / v1));
        }

        const bool pass = worst_kvl <= 1e-8 && worst_power <= 1e-8 && worst_sweeps <= 100 && all_sweep && two_err <= 1e-8;
        return {pass, fmt::format("feeders {}: KVL residual {:.1e} pu, power residual {:.1e} pu, max {} sweeps; "
                                  "two-bus error {:.1e} pu",
                                  fmt::join(names, ","), worst_kvl, worst_power, worst_sweeps, two_err)};
    }
} // namespace

int main()
{
    spdlog::set_level(spdlog::level::warn);
    int failures = 0;
    const auto report = [&](int n, const char *name, const std::function<Outcome()> &check) {
        Outcome o;
        try
        {
            o = check();
        }
        catch (const std::exception &e)
        {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        fmt::print("{} criterion {} ({}): {}\n", o.pass ? "PASS" : "FAIL", n, name, o.detail);
        std::fflush(stdout);
    };

    report(1, "droop settling", droop_settling);
    report(2, "AGC restoration", agc_restoration);
    report(3, "DER output limits", der_limits);
    report(4, "cadence conformance", cadence);
    report(5, "positive-sequence aggregation", positive_sequence);
    report(6, "headroom LP vs brute force", headroom_brute_force);
    std::optional<sc::RunResults> noise;
    const auto noise_run = [&]() -> const sc::RunResults & {
        if (!noise)
        {
            noise = sc::run(scenario("noise_agc"));
        }
        return *noise;
    };
    report(7, "voltage envelope", [&] { return voltage_envelope(noise_run()); });
    report(8, "frequency statistics", [&] { return frequency_statistics(noise_run()); });
    report(9, "performance", performance);
    report(10, "determinism", determinism);
    report(11, "distribution solver", distribution_solver);
    return failures;
}
