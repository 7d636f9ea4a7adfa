#include "tdcosim/config_error.hpp"
#include "tdcosim/headroom/vsm.hpp"
#include "tdcosim/scenario/scenario.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <memory>

namespace tdcosim::scenario
{
    namespace
    {
        using cosim::FederateContext;
        using cosim::FederateDecl;
        using cosim::Message;
        using cosim::Payload;
        using cosim::TimeGrant;
        using distribution::Complex;

        std::string topic_boundary_voltage(int bus) { return fmt::format("boundary_voltage.{}", bus); }
        std::string topic_boundary_power(int bus) { return fmt::format("boundary_power.{}", bus); }
        std::string topic_der_output(const std::string &f) { return "der_output." + f; }
        std::string topic_feeder_state(const std::string &f) { return "feeder_state." + f; }
        std::string topic_headroom(const std::string &f) { return "headroom." + f; }
        std::string topic_agc(const std::string &unit) { return "agc_setpoint." + unit; }
        std::string topic_der_setpoint(const std::string &d) { return "der_setpoint." + d; }
        std::string aggregator_unit(const std::string &f) { return "aggregator." + f; }

        long steps_per(double span, double dt) { return std::lround(span / dt); }

        bool on_mark(double t, double period)
        {
            const double r = t / period;
            return std::abs(r - std::round(r)) < 1e-9;
        }

        std::size_t mark_index(double t, double period) { return static_cast<std::size_t>(std::llround(t / period)); }

        // Latest message per topic among the grant inputs (inputs arrive ordered by delivery time).
        std::map<std::string, const Payload *> latest(const TimeGrant &grant)
        {
            std::map<std::string, const Payload *> out;
            for (const auto &m : grant.inputs)
            {
                out[m.topic] = &m.value;
            }
            return out;
        }

        bool participates(const Scenario &s, const std::string &unit)
        {
            if (!s.agc.enabled)
            {
                return false;
            }
            const auto &e = s.agc.participation.entries;
            return std::any_of(e.begin(), e.end(), [&](const auto &p) { return p.first == unit; });
        }

        class TransmissionFederate final : public cosim::Federate
        {
        public:
            TransmissionFederate(const Scenario &s, transmission::TransmissionSystem &ts,
                                 std::vector<std::pair<int, std::vector<double>>> native_noise)
                : s_(s), ts_(ts), noise_(std::move(native_noise))
            {
                log_every_ = steps_per(s.log_dt, s.cadences.internal_dt);
                for (const auto &u : ts_.ders())
                {
                    traces_.push_back({u.state.id, u.state.feeder, {}});
                }
                ts_.set_step_observer([this](const transmission::TransmissionSystem &sys) { observe(sys); });
            }

            FederateDecl declaration() const override
            {
                FederateDecl d;
                d.name = "transmission";
                d.exchange_interval = s_.cadences.meas_out;
                d.uninterruptible = true;
                d.publications.push_back("freq_hz");
                for (const auto &f : s_.feeders)
                {
                    d.publications.push_back(topic_boundary_voltage(f.bus));
                    d.publications.push_back(topic_der_output(f.name));
                    d.subscriptions.push_back(topic_boundary_power(f.bus));
                }
                for (const auto &g : s_.grid.generators)
                {
                    if (participates(s_, g.id))
                    {
                        d.subscriptions.push_back(topic_agc(g.id));
                    }
                }
                for (const auto &u : ts_.ders())
                {
                    d.subscriptions.push_back(topic_der_setpoint(u.state.id));
                }
                return d;
            }

            void initialize(FederateContext &ctx) override
            {
                record(ts_);
                publish(ctx, 0.0);
            }

            void on_grant(FederateContext &ctx, const TimeGrant &grant) override
            {
                const double t = cosim::to_seconds(grant.granted_time);
                ts_.advance_to(t);
                bool changed = false;
                for (const auto &[topic, value] : latest(grant))
                {
                    if (topic.rfind("boundary_power.", 0) == 0)
                    {
                        ts_.set_boundary_load(std::stoi(topic.substr(15)), std::get<Complex>(*value));
                        changed = true;
                    }
                    else if (topic.rfind("agc_setpoint.", 0) == 0)
                    {
                        ts_.set_agc_setpoint(topic.substr(13), std::get<double>(*value));
                        changed = true;
                    }
                    else if (topic.rfind("der_setpoint.", 0) == 0)
                    {
                        const auto &v = std::get<std::vector<double>>(*value);
                        ts_.set_der_setpoint(topic.substr(13), v.at(0), v.at(1));
                    }
                }
                if (on_mark(t, s_.cadences.td_exchange))
                {
                    const auto k = mark_index(t, s_.cadences.td_exchange);
                    for (const auto &[bus, series] : noise_)
                    {
                        ts_.set_load_multiplier(bus, series.at(k));
                    }
                    changed = changed || !noise_.empty();
                }
                if (changed)
                {
                    ts_.resolve_algebraic();
                }
                publish(ctx, t);
            }

            std::vector<double> t_log;
            std::vector<double> freq_log;
            std::vector<DerTrace> traces_;
            LimitCheck limits;

        private:
            void publish(FederateContext &ctx, double t)
            {
                ctx.publish("freq_hz", ts_.measure_frequency());
                if (!on_mark(t, s_.cadences.td_exchange))
                {
                    return;
                }
                for (const auto &f : s_.feeders)
                {
                    ctx.publish(topic_boundary_voltage(f.bus), ts_.get_boundary_voltage(f.bus));
                    std::vector<double> p;
                    for (const auto &u : ts_.ders())
                    {
                        if (u.state.feeder == f.name)
                        {
                            p.push_back(u.state.p_out);
                        }
                    }
                    ctx.publish(topic_der_output(f.name), std::move(p));
                }
            }

            void observe(const transmission::TransmissionSystem &sys)
            {
                const double dt = sys.dt();
                for (const auto &u : sys.ders())
                {
                    const auto &d = u.state;
                    const double limit =
                        std::max(0.0, std::min({d.p_mppt, d.p_caps, d.p_ref + d.p_headroom}));
                    // One tracking step of the lag from the previous output toward the limit.
                    const double allowance = (1.0 - dt / d.tg) * std::max(0.0, u.p_out_prev - limit) + 1e-9;
                    const double excess = d.p_out - limit - allowance;
                    ++limits.steps_checked;
                    if (excess > 0.0)
                    {
                        ++limits.violations;
                        if (excess > limits.worst_excess)
                        {
                            limits.worst_excess = excess;
                            limits.worst_der = d.id;
                            limits.worst_time = sys.time();
                        }
                    }
                }
                if (sys.step_count() % log_every_ == 0)
                {
                    record(sys);
                }
            }

            void record(const transmission::TransmissionSystem &sys)
            {
                const double t = cosim::to_seconds(cosim::from_seconds(sys.time()));
                t_log.push_back(t);
                freq_log.push_back(sys.measure_frequency());
                const auto &units = sys.ders();
                for (std::size_t k = 0; k < units.size(); ++k)
                {
                    const auto &d = units[k].state;
                    traces_[k].samples.push_back(
                        {t, d.p_out, d.p_drp, d.p_ext, d.p_mppt, units[k].p_cmd, d.p_ref + d.p_headroom});
                }
            }

            const Scenario &s_;
            transmission::TransmissionSystem &ts_;
            std::vector<std::pair<int, std::vector<double>>> noise_;
            long log_every_ = 1;
        };

        class AgcFederate final : public cosim::Federate
        {
        public:
            AgcFederate(const Scenario &s, double f_initial, double headroom_mw)
                : s_(s), area_(s.agc.area), f_(f_initial)
            {
                area_.headroom = headroom_mw;
            }

            FederateDecl declaration() const override
            {
                FederateDecl d;
                d.name = "agc";
                d.exchange_interval = s_.cadences.meas_out;
                d.uninterruptible = true;
                d.subscriptions.push_back("freq_hz");
                if (s_.agc.enabled)
                {
                    for (const auto &[unit, beta] : s_.agc.participation.entries)
                    {
                        d.publications.push_back(topic_agc(unit));
                    }
                }
                return d;
            }

            void initialize(FederateContext &ctx) override
            {
                t.push_back(0.0);
                ace.push_back(agc::compute_ace(f_, area_));
                signal.push_back(0.0);
                if (s_.agc.enabled)
                {
                    for (const auto &[unit, beta] : s_.agc.participation.entries)
                    {
                        ctx.publish(topic_agc(unit), 0.0);
                    }
                }
            }

            void on_grant(FederateContext &ctx, const TimeGrant &grant) override
            {
                const double now = cosim::to_seconds(grant.granted_time);
                for (const auto &[topic, value] : latest(grant))
                {
                    if (topic == "freq_hz")
                    {
                        f_ = std::get<double>(*value);
                    }
                }
                const double a = agc::compute_ace(f_, area_);
                double sig = 0.0;
                if (s_.agc.enabled)
                {
                    const double prev = area_.last_signal;
                    sig = agc::pi_update(area_, a, s_.cadences.meas_out);
                    if (agc::signal_updated(area_))
                    {
                        for (const auto &[unit, mw] : agc::dispatch_participation(sig, s_.agc.participation))
                        {
                            ctx.publish(topic_agc(unit), mw);
                        }
                        if (sig != prev)
                        {
                            events.push_back({now, "agc_signal", fmt::format("{}", sig)});
                        }
                    }
                }
                t.push_back(now);
                ace.push_back(a);
                signal.push_back(sig);
            }

            std::vector<double> t;
            std::vector<double> ace;
            std::vector<double> signal;
            std::vector<LoggedEvent> events;

        private:
            const Scenario &s_;
            agc::AgcAreaState area_;
            double f_;
        };

        struct FeederStart
        {
            Complex v_pu;
            std::vector<double> der_p;
            distribution::FeederSolution solution;
        };

        class FeederFederate final : public cosim::Federate
        {
        public:
            FeederFederate(const Scenario &s, std::size_t index, std::vector<double> noise, FeederStart start)
                : s_(s), net_(s.networks[index]), bus_(s.feeders[index].bus), noise_(std::move(noise)),
                  v_(start.v_pu), der_p_(std::move(start.der_p)), last_(std::move(start.solution))
            {
                trace.name = net_.name;
                trace.bus = bus_;
            }

            FederateDecl declaration() const override
            {
                FederateDecl d;
                d.name = "feeder." + net_.name;
                d.exchange_interval = s_.cadences.td_exchange;
                d.uninterruptible = true;
                d.subscriptions = {topic_boundary_voltage(bus_), topic_der_output(net_.name)};
                d.publications = {topic_boundary_power(bus_), topic_feeder_state(net_.name)};
                return d;
            }

            void initialize(FederateContext &ctx) override { report(ctx, 0.0, noise_.at(0)); }

            void on_grant(FederateContext &ctx, const TimeGrant &grant) override
            {
                const double t = cosim::to_seconds(grant.granted_time);
                for (const auto &[topic, value] : latest(grant))
                {
                    if (topic.rfind("boundary_voltage.", 0) == 0)
                    {
                        v_ = std::get<Complex>(*value);
                    }
                    else
                    {
                        der_p_ = std::get<std::vector<double>>(*value);
                    }
                }
                const double mult = noise_.at(mark_index(t, s_.cadences.td_exchange));
                last_ = distribution::solve_feeder(net_, v_, der_p_, mult, {}, &last_);
                report(ctx, t, mult);
            }

            FeederTrace trace;

        private:
            void report(FederateContext &ctx, double t, double mult)
            {
                ctx.publish(topic_boundary_power(bus_), distribution::positive_sequence_mva(last_.s_gross));
                std::vector<double> state = {std::abs(v_), std::arg(v_), mult};
                state.insert(state.end(), der_p_.begin(), der_p_.end());
                ctx.publish(topic_feeder_state(net_.name), std::move(state));
                trace.voltage.push_back({t, distribution::voltage_stats(net_, last_)});
                trace.substation.push_back({t, mult, v_, distribution::positive_sequence_mva(last_.s_abc),
                                            distribution::positive_sequence_mva(last_.s_gross)});
                trace.max_sweeps = std::max(trace.max_sweeps, last_.iterations);
                trace.max_residual = std::max(trace.max_residual, last_.residual);
            }

            const Scenario &s_;
            const distribution::FeederNetwork &net_;
            int bus_;
            std::vector<double> noise_;
            Complex v_;
            std::vector<double> der_p_;
            distribution::FeederSolution last_;
        };

        headroom::HeadroomLimits headroom_limits(const Scenario &s, const distribution::FeederNetwork &net)
        {
            headroom::HeadroomLimits lim;
            lim.v_lo = s.headroom.v_lo;
            lim.v_hi = s.headroom.v_hi;
            lim.current_limits = s.headroom.current_limits;
            lim.p_cap.resize(static_cast<Eigen::Index>(net.ders.size()));
            for (std::size_t j = 0; j < net.ders.size(); ++j)
            {
                lim.p_cap[static_cast<Eigen::Index>(j)] = net.ders[j].p_caps_mw;
            }
            return lim;
        }

        // Per-DER allocation above P_ref: z*_j - P_ref_j. An unusable LP freezes every DER at its present output.
        std::vector<double> allocate(const Scenario &s, const distribution::FeederNetwork &net,
                                     const headroom::OperatingPoint &op, double t, std::string *detail)
        {
            headroom::VsmOptions vo;
            vo.delta_mw = s.headroom.delta_mw;
            vo.monitor_all = s.headroom.monitor_all;
            const auto h = headroom::compute_headroom(net, op, headroom_limits(s, net), vo, t);
            std::vector<double> out(net.ders.size());
            const bool ok = h.result.status == headroom::LpStatus::Optimal;
            for (std::size_t j = 0; j < net.ders.size(); ++j)
            {
                const double z = ok ? h.result.p_opt[static_cast<Eigen::Index>(j)] : std::max(0.0, op.der_p_mw[j]);
                out[j] = z - net.ders[j].p_ref_mw;
            }
            if (detail)
            {
                *detail = ok ? fmt::format("{} headroom {:.6f} MW", net.name, h.result.headroom)
                             : fmt::format("{} headroom 0 MW ({})", net.name, h.result.diagnostic);
            }
            return out;
        }

        class HeadroomFederate final : public cosim::Federate
        {
        public:
            HeadroomFederate(const Scenario &s, std::size_t index, headroom::OperatingPoint op)
                : s_(s), net_(s.networks[index]), op_(std::move(op))
            {
            }

            FederateDecl declaration() const override
            {
                FederateDecl d;
                d.name = "headroom." + net_.name;
                d.exchange_interval = s_.cadences.td_exchange;
                d.uninterruptible = true;
                d.subscriptions = {topic_feeder_state(net_.name)};
                d.publications = {topic_headroom(net_.name)};
                return d;
            }

            void initialize(FederateContext &ctx) override { refresh(ctx, 0.0); }

            void on_grant(FederateContext &ctx, const TimeGrant &grant) override
            {
                const double t = cosim::to_seconds(grant.granted_time);
                for (const auto &[topic, value] : latest(grant))
                {
                    const auto &v = std::get<std::vector<double>>(*value);
                    op_.v_sub_pu = std::polar(v.at(0), v.at(1));
                    op_.load_multiplier = v.at(2);
                    op_.der_p_mw.assign(v.begin() + 3, v.end());
                }
                if (headroom::refresh_policy(t, last_, s_.cadences.vsm_refresh))
                {
                    refresh(ctx, t);
                }
            }

            std::vector<LoggedEvent> events;

        private:
            void refresh(FederateContext &ctx, double t)
            {
                std::string detail;
                auto alloc = allocate(s_, net_, op_, t, &detail);
                double total = 0.0;
                for (std::size_t j = 0; j < alloc.size(); ++j)
                {
                    total += alloc[j] + net_.ders[j].p_ref_mw - op_.der_p_mw[j];
                }
                std::vector<double> payload = {total};
                payload.insert(payload.end(), alloc.begin(), alloc.end());
                ctx.publish(topic_headroom(net_.name), std::move(payload));
                events.push_back({t, "headroom_refresh", std::move(detail)});
                last_ = t;
            }

            const Scenario &s_;
            const distribution::FeederNetwork &net_;
            headroom::OperatingPoint op_;
            std::optional<double> last_;
        };

        class AggregatorFederate final : public cosim::Federate
        {
        public:
            AggregatorFederate(const Scenario &s, std::size_t index, std::vector<double> alloc)
                : s_(s), net_(s.networks[index]), alloc_(std::move(alloc))
            {
            }

            FederateDecl declaration() const override
            {
                FederateDecl d;
                d.name = aggregator_unit(net_.name);
                d.exchange_interval = s_.cadences.td_exchange;
                d.uninterruptible = true;
                if (participates(s_, aggregator_unit(net_.name)))
                {
                    d.subscriptions.push_back(topic_agc(aggregator_unit(net_.name)));
                }
                if (s_.headroom.enabled)
                {
                    d.subscriptions.push_back(topic_headroom(net_.name));
                }
                for (const auto &der : net_.ders)
                {
                    d.publications.push_back(topic_der_setpoint(der.id));
                }
                return d;
            }

            void initialize(FederateContext &ctx) override { publish(ctx); }

            void on_grant(FederateContext &ctx, const TimeGrant &grant) override
            {
                for (const auto &[topic, value] : latest(grant))
                {
                    if (topic.rfind("agc_setpoint.", 0) == 0)
                    {
                        signal_ = std::get<double>(*value);
                    }
                    else
                    {
                        const auto &v = std::get<std::vector<double>>(*value);
                        alloc_.assign(v.begin() + 1, v.end());
                    }
                }
                publish(ctx);
            }

        private:
            void publish(FederateContext &ctx)
            {
                const double share = net_.ders.empty() ? 0.0 : signal_ / static_cast<double>(net_.ders.size());
                for (std::size_t j = 0; j < net_.ders.size(); ++j)
                {
                    const double h = s_.headroom.enabled ? alloc_.at(j) : std::numeric_limits<double>::infinity();
                    ctx.publish(topic_der_setpoint(net_.ders[j].id), std::vector<double>{share, h});
                }
            }

            const Scenario &s_;
            const distribution::FeederNetwork &net_;
            std::vector<double> alloc_;
            double signal_ = 0.0;
        };

        der::MpptSeries mppt_for(const Scenario &s, const distribution::FeederDer &d)
        {
            der::MpptSeries series;
            if (d.mppt_file)
            {
                series = der::MpptSeries::from_csv(*d.mppt_file);
            }
            else
            {
                series = der::MpptSeries::constant(d.mppt_mw.value_or(s.der_defaults.mppt_mw),
                                                   s.stop_time + s.cadences.td_exchange);
            }
            if (series.start() > 0.0 || series.end() < s.stop_time)
            {
                throw ConfigError(fmt::format("MPPT series for DER '{}' covers [{}, {}) s but the run needs [0, {}] s",
                                              d.id, series.start(), series.end(), s.stop_time));
            }
            return series;
        }

        std::vector<double> der_outputs(const transmission::TransmissionSystem &ts, const std::string &feeder)
        {
            std::vector<double> p;
            for (const auto &u : ts.ders())
            {
                if (u.state.feeder == feeder)
                {
                    p.push_back(u.state.p_out);
                }
            }
            return p;
        }

        // Alternates the transmission power flow and the feeder solves until the boundary loads settle.
        std::vector<FeederStart> settle(const Scenario &s, transmission::TransmissionSystem &ts,
                                        const std::vector<std::vector<double>> &feeder_noise)
        {
            std::vector<FeederStart> starts(s.feeders.size());
            for (std::size_t k = 0; k < s.feeders.size(); ++k)
            {
                std::vector<double> p;
                for (const auto &d : s.networks[k].ders)
                {
                    p.push_back(d.p_ref_mw);
                }
                const auto flat = distribution::solve_feeder(s.networks[k], 1.0, p, feeder_noise[k].at(0));
                ts.set_boundary_load(s.feeders[k].bus, distribution::positive_sequence_mva(flat.s_gross));
            }
            double change = std::numeric_limits<double>::infinity();
            int it = 0;
            for (; it < 50 && change > 1e-9; ++it)
            {
                ts.initialize();
                change = 0.0;
                for (std::size_t k = 0; k < s.feeders.size(); ++k)
                {
                    auto &st = starts[k];
                    st.v_pu = ts.get_boundary_voltage(s.feeders[k].bus);
                    st.der_p = der_outputs(ts, s.feeders[k].name);
                    st.solution = distribution::solve_feeder(s.networks[k], st.v_pu, st.der_p, feeder_noise[k].at(0));
                    const Complex load = distribution::positive_sequence_mva(st.solution.s_gross);
                    change = std::max(change, std::abs(load - ts.boundary_load(s.feeders[k].bus)));
                    ts.set_boundary_load(s.feeders[k].bus, load);
                }
            }
            if (change > 1e-9)
            {
                throw std::runtime_error(
                    fmt::format("initial boundary exchange did not settle after {} passes (last change {:.3e} MVA)", it,
                                change));
            }
            ts.initialize();
            spdlog::debug("initial boundary exchange settled in {} passes", it);
            return starts;
        }
    } // namespace

    RunResults run(const Scenario &s)
    {
        validate(s);
        const auto wall_start = std::chrono::steady_clock::now();

        transmission::TransmissionOptions topt;
        topt.dt = s.cadences.internal_dt;
        topt.frequency_bus = s.frequency_bus;
        transmission::TransmissionSystem ts(s.grid, topt);
        for (std::size_t k = 0; k < s.feeders.size(); ++k)
        {
            ts.add_boundary(s.feeders[k].bus);
            for (const auto &fd : s.networks[k].ders)
            {
                der::DerState d;
                d.id = fd.id;
                d.feeder = s.feeders[k].name;
                d.node = s.networks[k].nodes[fd.node].id;
                d.p_ref = fd.p_ref_mw;
                d.p_caps = fd.p_caps_mw;
                d.tg = fd.tg.value_or(s.der_defaults.tg);
                d.d_dn = fd.d_dn.value_or(s.der_defaults.d_dn);
                d.db_uf = fd.db_uf.value_or(s.der_defaults.db_uf);
                d.db_of = fd.db_of.value_or(s.der_defaults.db_of);
                ts.add_der(std::move(d), mppt_for(s, fd), s.feeders[k].bus);
            }
        }
        for (const auto &e : s.events)
        {
            ts.schedule(e);
        }

        const std::size_t marks = mark_index(s.stop_time, s.cadences.td_exchange) + 1;
        std::vector<std::pair<int, std::vector<double>>> native_noise;
        std::uint64_t stream = 0;
        for (const int bus : ts.native_load_buses())
        {
            auto series = generate_load_series(derive_seed(s.noise.seed, stream++), s.noise.std, marks);
            ts.set_load_multiplier(bus, series.at(0));
            native_noise.emplace_back(bus, std::move(series));
        }
        std::vector<std::vector<double>> feeder_noise;
        for (std::size_t k = 0; k < s.feeders.size(); ++k)
        {
            feeder_noise.push_back(generate_load_series(derive_seed(s.noise.seed, stream++), s.noise.std, marks));
        }

        auto starts = settle(s, ts, feeder_noise);
        std::vector<std::vector<double>> alloc(s.feeders.size());
        if (s.headroom.enabled)
        {
            for (std::size_t k = 0; k < s.feeders.size(); ++k)
            {
                const auto &net = s.networks[k];
                headroom::OperatingPoint op{starts[k].v_pu, starts[k].der_p, feeder_noise[k].at(0)};
                alloc[k] = allocate(s, net, op, 0.0, nullptr);
                for (std::size_t j = 0; j < net.ders.size(); ++j)
                {
                    ts.set_der_setpoint(net.ders[j].id, 0.0, alloc[k][j]);
                }
            }
            starts = settle(s, ts, feeder_noise);
        }

        std::vector<std::unique_ptr<cosim::Federate>> owned;
        auto *trans = new TransmissionFederate(s, ts, std::move(native_noise));
        owned.emplace_back(trans);
        // Anti-windup bound: what the participating units can still add above their start point.
        double agc_room = 0.0;
        for (const auto &[unit, beta] : s.agc.participation.entries)
        {
            for (const auto &g : s.grid.generators)
            {
                if (g.id == unit)
                {
                    agc_room += (g.governor.pmax - ts.mechanical_power(g.id)) * s.grid.base_mva;
                }
            }
            for (std::size_t k = 0; k < s.feeders.size(); ++k)
            {
                if (unit == aggregator_unit(s.feeders[k].name))
                {
                    for (const auto &d : s.networks[k].ders)
                    {
                        agc_room += d.p_caps_mw - d.p_ref_mw;
                    }
                }
            }
        }
        auto *agc_fed = new AgcFederate(s, ts.measure_frequency(), agc_room);
        owned.emplace_back(agc_fed);
        std::vector<FeederFederate *> feeders;
        std::vector<HeadroomFederate *> headrooms;
        for (std::size_t k = 0; k < s.feeders.size(); ++k)
        {
            headroom::OperatingPoint op{starts[k].v_pu, starts[k].der_p, feeder_noise[k].at(0)};
            auto *ff = new FeederFederate(s, k, feeder_noise[k], std::move(starts[k]));
            owned.emplace_back(ff);
            feeders.push_back(ff);
            if (s.headroom.enabled)
            {
                auto *hf = new HeadroomFederate(s, k, std::move(op));
                owned.emplace_back(hf);
                headrooms.push_back(hf);
            }
            owned.emplace_back(new AggregatorFederate(s, k, alloc[k]));
        }
        std::vector<cosim::Federate *> ptrs;
        for (auto &f : owned)
        {
            ptrs.push_back(f.get());
        }

        RunResults r;
        r.scenario = s.name;
        cosim::RunOptions ropt;
        ropt.execution = s.execution;
        spdlog::info("running '{}' to {} s with {} federates", s.name, s.stop_time, ptrs.size());
        r.federation_log = cosim::run_federation(ptrs, s.federation, s.stop_time, ropt);

        r.t = std::move(trans->t_log);
        r.freq_hz = std::move(trans->freq_log);
        r.ders = std::move(trans->traces_);
        r.limits = trans->limits;
        r.internal_dt = ts.dt();
        r.internal_steps = ts.step_count();
        r.t_ace = std::move(agc_fed->t);
        r.ace_mw = std::move(agc_fed->ace);
        r.agc_signal_mw = std::move(agc_fed->signal);
        for (auto *ff : feeders)
        {
            r.feeders.push_back(std::move(ff->trace));
        }
        for (const auto &e : ts.applied_events())
        {
            r.events.push_back({e.time, "event", e.description});
        }
        for (auto &e : agc_fed->events)
        {
            r.events.push_back(std::move(e));
        }
        for (auto *hf : headrooms)
        {
            for (auto &e : hf->events)
            {
                r.events.push_back(std::move(e));
            }
        }
        std::stable_sort(r.events.begin(), r.events.end(),
                         [](const LoggedEvent &a, const LoggedEvent &b) { return a.t < b.t; });
        r.freq_stats = series_stats(r.freq_hz);
        r.ace_stats = series_stats(r.ace_mw);
        r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
        spdlog::info("'{}' finished in {:.2f} s wall clock", s.name, r.wall_seconds);
        return r;
    }

    SeriesStats series_stats(std::span<const double> values)
    {
        SeriesStats st;
        st.count = values.size();
        if (values.empty())
        {
            return st;
        }
        double sum = 0.0;
        st.min = values[0];
        st.max = values[0];
        for (const double v : values)
        {
            sum += v;
            st.min = std::min(st.min, v);
            st.max = std::max(st.max, v);
        }
        st.mean = sum / static_cast<double>(values.size());
        double sq = 0.0;
        for (const double v : values)
        {
            sq += (v - st.mean) * (v - st.mean);
        }
        st.std = std::sqrt(sq / static_cast<double>(values.size()));
        return st;
    }
} // namespace tdcosim::scenario
