#include "tdcosim/scenario/scenario.hpp"

#include "common/yaml_helpers.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>
#include <set>

namespace tdcosim::scenario
{
    namespace
    {
        using detail::Doc;

        bool divides(double step, double span)
        {
            if (!(step > 0.0) || !(span > 0.0))
            {
                return false;
            }
            const double r = span / step;
            return std::round(r) >= 1.0 && std::abs(r - std::round(r)) <= 1e-6;
        }

        // Seconds as a number or a "p/q" fraction, e.g. "1/30".
        double seconds(const Doc &doc, const YAML::Node &node, const char *key, double fallback)
        {
            const YAML::Node v = node[key];
            if (!v || v.IsNull())
            {
                return fallback;
            }
            const auto text = doc.as<std::string>(v, key);
            const auto slash = text.find('/');
            try
            {
                if (slash == std::string::npos)
                {
                    return std::stod(text);
                }
                const double num = std::stod(text.substr(0, slash));
                const double den = std::stod(text.substr(slash + 1));
                if (den == 0.0)
                {
                    doc.fail(v, fmt::format("'{}' divides by zero", key));
                }
                return num / den;
            }
            catch (const std::logic_error &)
            {
                doc.fail(v, fmt::format("'{}' must be a number or a fraction like 1/30", key));
            }
        }

        std::filesystem::path resolve(const std::filesystem::path &base, const std::string &rel)
        {
            const std::filesystem::path p(rel);
            return p.is_absolute() ? p : (base / p).lexically_normal();
        }

        transmission::EventKind event_kind(const Doc &doc, const YAML::Node &node)
        {
            const auto s = doc.required<std::string>(node, "type");
            if (s == "generator_trip")
            {
                return transmission::EventKind::GeneratorTrip;
            }
            if (s == "setpoint_change")
            {
                return transmission::EventKind::SetpointChange;
            }
            if (s == "load_scale")
            {
                return transmission::EventKind::LoadScale;
            }
            doc.fail(node["type"], fmt::format("unknown event type '{}' (generator_trip, setpoint_change, load_scale)", s));
        }
    } // namespace

    std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
    {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32U),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32U)};
        std::array<std::uint32_t, 2> out{};
        seq.generate(out.begin(), out.end());
        return (static_cast<std::uint64_t>(out[0]) << 32U) | out[1];
    }

    std::vector<double> generate_load_series(std::uint64_t seed, double std, std::size_t n_steps)
    {
        if (!(std >= 0.0))
        {
            throw std::invalid_argument("load noise std must be >= 0");
        }
        std::vector<double> out(n_steps, 1.0);
        if (std == 0.0)
        {
            return out;
        }
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(1.0, std);
        for (auto &v : out)
        {
            v = normal(rng);
        }
        return out;
    }

    void validate(const Scenario &s)
    {
        auto fail = [&](const std::string &msg) { throw ConfigError(fmt::format("{}: {}", s.source.string(), msg)); };
        const auto &c = s.cadences;
        if (!(c.td_exchange > 0.0) || !(c.meas_out > 0.0) || !(c.agc_period > 0.0) || !(c.internal_dt > 0.0) ||
            !(c.vsm_refresh >= 0.0))
        {
            fail("cadences must be positive");
        }
        if (!divides(c.internal_dt, c.td_exchange))
        {
            fail(fmt::format("internal_dt {} does not divide td_exchange {}", c.internal_dt, c.td_exchange));
        }
        if (!divides(c.internal_dt, c.meas_out))
        {
            fail(fmt::format("internal_dt {} does not divide meas_out {}", c.internal_dt, c.meas_out));
        }
        if (!divides(c.meas_out, c.td_exchange))
        {
            fail(fmt::format("meas_out {} does not divide td_exchange {}", c.meas_out, c.td_exchange));
        }
        if (!divides(c.meas_out, c.agc_period))
        {
            fail(fmt::format("agc_period {} is not a multiple of meas_out {}", c.agc_period, c.meas_out));
        }
        if (c.vsm_refresh > 0.0 && !divides(c.td_exchange, c.vsm_refresh))
        {
            fail(fmt::format("vsm_refresh {} is not a multiple of td_exchange {}", c.vsm_refresh, c.td_exchange));
        }
        if (!divides(c.internal_dt, s.log_dt))
        {
            fail(fmt::format("log_dt {} is not a multiple of internal_dt {}", s.log_dt, c.internal_dt));
        }
        if (!divides(c.meas_out, s.stop_time))
        {
            fail(fmt::format("stop_time {} is not a positive multiple of meas_out {}", s.stop_time, c.meas_out));
        }
        if (!(s.noise.std >= 0.0))
        {
            fail("noise std must be >= 0");
        }
        if (s.networks.size() != s.feeders.size())
        {
            fail("feeder networks are not loaded");
        }
        s.grid.validate();

        std::set<std::string> names;
        std::set<int> buses;
        std::set<std::string> der_ids;
        for (std::size_t k = 0; k < s.feeders.size(); ++k)
        {
            const auto &f = s.feeders[k];
            if (!names.insert(f.name).second)
            {
                fail(fmt::format("duplicate feeder name '{}'", f.name));
            }
            if (!s.grid.find_bus(f.bus))
            {
                fail(fmt::format("feeder '{}' is bound to unknown bus {}", f.name, f.bus));
            }
            if (!buses.insert(f.bus).second)
            {
                fail(fmt::format("bus {} hosts more than one feeder", f.bus));
            }
            for (const auto &d : s.networks[k].ders)
            {
                if (!der_ids.insert(d.id).second)
                {
                    fail(fmt::format("DER id '{}' appears in more than one place", d.id));
                }
            }
        }
        for (const auto &e : s.events)
        {
            if (e.time < 0.0 || e.time > s.stop_time)
            {
                fail(fmt::format("event at {} s lies outside [0, {}]", e.time, s.stop_time));
            }
            if (e.kind == transmission::EventKind::LoadScale)
            {
                if (!s.grid.find_bus(e.bus))
                {
                    fail(fmt::format("load_scale event names unknown bus {}", e.bus));
                }
            }
            else
            {
                try
                {
                    (void)s.grid.generator_index(e.generator);
                }
                catch (const transmission::GridError &)
                {
                    fail(fmt::format("event names unknown generator '{}'", e.generator));
                }
            }
        }
        try
        {
            s.agc.area.validate();
            if (s.agc.enabled)
            {
                s.agc.participation.validate();
            }
        }
        catch (const agc::AgcError &e)
        {
            fail(e.what());
        }
        if (s.agc.enabled)
        {
            for (const auto &[unit, beta] : s.agc.participation.entries)
            {
                const bool is_gen = std::any_of(s.grid.generators.begin(), s.grid.generators.end(),
                                                [&](const auto &g) { return g.id == unit; });
                const bool is_agg = unit.rfind("aggregator.", 0) == 0 && names.count(unit.substr(11)) > 0;
                if (!is_gen && !is_agg)
                {
                    fail(fmt::format("participation unit '{}' is neither a generator nor aggregator.<feeder>", unit));
                }
            }
        }
        if (s.headroom.enabled && !(s.headroom.delta_mw > 0.0 && s.headroom.v_lo < s.headroom.v_hi))
        {
            fail("headroom needs delta_mw > 0 and v_lo < v_hi");
        }
    }

    Scenario load_scenario(const std::filesystem::path &path)
    {
        Doc doc;
        const YAML::Node root = detail::load_yaml(path, doc);
        if (!root.IsMap())
        {
            doc.fail(root, "scenario must be a mapping");
        }
        const auto base = path.parent_path();
        Scenario s;
        s.source = path;
        s.name = doc.optional<std::string>(root, "name", path.stem().string());

        s.grid_file = resolve(base, doc.required<std::string>(root, "grid"));
        if (!std::filesystem::exists(s.grid_file))
        {
            doc.fail(root["grid"], fmt::format("grid file not found: {}", s.grid_file.string()));
        }
        s.grid = transmission::load_grid(s.grid_file);

        s.stop_time = seconds(doc, root, "stop_time", 60.0);
        s.log_dt = seconds(doc, root, "log_dt", 0.1);
        if (const YAML::Node c = root["cadences"])
        {
            s.cadences.td_exchange = seconds(doc, c, "td_exchange", s.cadences.td_exchange);
            s.cadences.meas_out = seconds(doc, c, "meas_out", s.cadences.meas_out);
            s.cadences.agc_period = seconds(doc, c, "agc_period", s.cadences.agc_period);
            s.cadences.internal_dt = seconds(doc, c, "internal_dt", s.cadences.internal_dt);
            s.cadences.vsm_refresh = seconds(doc, c, "vsm_refresh", s.cadences.vsm_refresh);
            if (c["internal_dt"] && !divides(s.cadences.internal_dt, s.cadences.td_exchange))
            {
                doc.fail(c["internal_dt"], fmt::format("internal_dt {} does not divide td_exchange {}",
                                                       s.cadences.internal_dt, s.cadences.td_exchange));
            }
        }

        for (const auto &node : doc.sequence(root, "feeders", false))
        {
            FeederBinding fb;
            fb.file = resolve(base, doc.required<std::string>(node, "file"));
            if (!std::filesystem::exists(fb.file))
            {
                doc.fail(node, fmt::format("feeder file not found: {}", fb.file.string()));
            }
            fb.bus = doc.required<int>(node, "bus");
            if (node["tap"])
            {
                fb.tap = doc.as<double>(node["tap"], "tap");
            }
            auto net = distribution::load_feeder(fb.file);
            fb.name = doc.optional<std::string>(node, "name", net.name);
            net.name = fb.name;
            if (fb.tap)
            {
                net.source_tap = *fb.tap;
            }
            // Replicas share a file, so DER ids are prefixed with the binding name when asked.
            if (doc.optional<bool>(node, "prefix_ders", false))
            {
                for (auto &d : net.ders)
                {
                    d.id = fb.name + "." + d.id;
                }
            }
            s.feeders.push_back(std::move(fb));
            s.networks.push_back(std::move(net));
        }

        if (const YAML::Node d = root["der_defaults"])
        {
            s.der_defaults.tg = doc.optional<double>(d, "tg", s.der_defaults.tg);
            s.der_defaults.d_dn = doc.optional<double>(d, "d_dn", s.der_defaults.d_dn);
            s.der_defaults.db_uf = doc.optional<double>(d, "db_uf", s.der_defaults.db_uf);
            s.der_defaults.db_of = doc.optional<double>(d, "db_of", s.der_defaults.db_of);
            s.der_defaults.mppt_mw = doc.optional<double>(d, "mppt_mw", s.der_defaults.mppt_mw);
        }

        double total_load_mw = 0.0;
        for (const auto &b : s.grid.buses)
        {
            total_load_mw += b.load_p * s.grid.base_mva;
        }
        for (const auto &n : s.networks)
        {
            total_load_mw += n.total_load_kw() / 1000.0;
        }
        auto &area = s.agc.area;
        area.bias = 0.01 * total_load_mw; // 1 % of load per 0.1 Hz
        area.f0 = s.grid.base_hz;
        area.signal_period = s.cadences.agc_period;
        area.measurement_period = s.cadences.meas_out;
        const YAML::Node a = root["agc"];
        if (a)
        {
            s.agc.enabled = doc.optional<bool>(a, "enabled", true);
            area.bias = doc.optional<double>(a, "bias", area.bias);
            area.deadband = doc.optional<double>(a, "deadband", area.deadband);
            area.kp = doc.optional<double>(a, "kp", area.kp);
            area.ki = doc.optional<double>(a, "ki", area.ki);
        }
        if (a && a["participation"])
        {
            for (const auto &node : doc.sequence(a, "participation"))
            {
                s.agc.participation.entries.emplace_back(doc.required<std::string>(node, "unit"),
                                                         doc.required<double>(node, "beta"));
            }
        }
        else
        {
            for (const auto &g : s.grid.generators)
            {
                if (g.agc_participation > 0.0)
                {
                    s.agc.participation.entries.emplace_back(g.id, g.agc_participation);
                }
            }
        }

        if (const YAML::Node h = root["headroom"])
        {
            s.headroom.enabled = doc.optional<bool>(h, "enabled", true);
            s.headroom.delta_mw = doc.optional<double>(h, "delta_mw", s.headroom.delta_mw);
            s.headroom.v_lo = doc.optional<double>(h, "v_lo", s.headroom.v_lo);
            s.headroom.v_hi = doc.optional<double>(h, "v_hi", s.headroom.v_hi);
            s.headroom.current_limits = doc.optional<bool>(h, "current_limits", s.headroom.current_limits);
            s.headroom.monitor_all = doc.optional<bool>(h, "monitor_all", s.headroom.monitor_all);
        }

        if (const YAML::Node n = root["noise"])
        {
            s.noise.std = doc.optional<double>(n, "std", 0.0);
            s.noise.seed = doc.optional<std::uint64_t>(n, "seed", 0);
        }

        for (const auto &node : doc.sequence(root, "events", false))
        {
            transmission::Event e;
            e.kind = event_kind(doc, node);
            e.time = doc.required<double>(node, "time");
            switch (e.kind)
            {
            case transmission::EventKind::GeneratorTrip:
                e.generator = doc.required<std::string>(node, "generator");
                break;
            case transmission::EventKind::SetpointChange:
                e.generator = doc.required<std::string>(node, "generator");
                e.value = doc.required<double>(node, "mw");
                break;
            case transmission::EventKind::LoadScale:
                e.bus = doc.required<int>(node, "bus");
                e.value = doc.required<double>(node, "factor");
                break;
            }
            s.events.push_back(std::move(e));
        }

        if (const YAML::Node f = root["frequency"])
        {
            if (f["bus"])
            {
                s.frequency_bus = doc.as<int>(f["bus"], "bus");
            }
        }

        if (const YAML::Node fed = root["federation"])
        {
            s.federation.seed = doc.optional<std::uint64_t>(fed, "seed", 0);
            s.federation.consume_at_publish_time =
                doc.optional<bool>(fed, "consume_at_publish_time", s.federation.consume_at_publish_time);
            const auto exec = doc.optional<std::string>(fed, "execution", "sequential");
            if (exec == "parallel")
            {
                s.execution = cosim::Execution::Parallel;
            }
            else if (exec != "sequential")
            {
                doc.fail(fed["execution"], "execution must be 'sequential' or 'parallel'");
            }
            if (const YAML::Node topics = fed["topics"])
            {
                if (!topics.IsMap())
                {
                    doc.fail(topics, "'topics' must map topic names to {latency, drop}");
                }
                for (const auto &kv : topics)
                {
                    cosim::TopicConfig tc;
                    tc.latency = doc.optional<double>(kv.second, "latency", 0.0);
                    tc.drop_probability = doc.optional<double>(kv.second, "drop", 0.0);
                    s.federation.topics[kv.first.as<std::string>()] = tc;
                }
            }
        }
        if (root["output_dir"])
        {
            s.output_dir = resolve(base, doc.as<std::string>(root["output_dir"], "output_dir"));
        }

        validate(s);
        return s;
    }

    void apply_overrides(Scenario &s, const Overrides &o)
    {
        if (o.seed)
        {
            s.noise.seed = *o.seed;
            s.federation.seed = *o.seed;
        }
        if (o.stop_time)
        {
            s.stop_time = *o.stop_time;
        }
        if (o.no_agc)
        {
            s.agc.enabled = false;
        }
        if (o.output_dir)
        {
            s.output_dir = *o.output_dir;
        }
        validate(s);
    }
} // namespace tdcosim::scenario
