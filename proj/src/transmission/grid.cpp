#include "tdcosim/transmission/grid.hpp"

#include "common/yaml_helpers.hpp"

#include <fmt/format.h>

#include <set>

namespace tdcosim::transmission
{
    std::optional<std::size_t> Grid::find_bus(int id) const
    {
        for (std::size_t i = 0; i < buses.size(); ++i)
        {
            if (buses[i].id == id)
            {
                return i;
            }
        }
        return std::nullopt;
    }

    std::size_t Grid::bus_index(int id) const
    {
        if (auto i = find_bus(id))
        {
            return *i;
        }
        throw GridError(GridError::Code::UnknownElement, fmt::format("unknown bus {}", id));
    }

    std::size_t Grid::generator_index(std::string_view id) const
    {
        for (std::size_t i = 0; i < generators.size(); ++i)
        {
            if (generators[i].id == id)
            {
                return i;
            }
        }
        throw GridError(GridError::Code::UnknownElement, fmt::format("unknown generator '{}'", id));
    }

    std::size_t Grid::online_generator_count() const
    {
        std::size_t n = 0;
        for (const auto &g : generators)
        {
            n += g.online ? 1 : 0;
        }
        return n;
    }

    void Grid::validate() const
    {
        using Code = GridError::Code;
        if (buses.empty())
        {
            throw GridError(Code::InvalidData, "grid has no buses");
        }
        std::set<int> ids;
        int slack = 0;
        for (const auto &b : buses)
        {
            if (!ids.insert(b.id).second)
            {
                throw GridError(Code::InvalidData, fmt::format("duplicate bus id {}", b.id));
            }
            slack += b.type == BusType::Slack ? 1 : 0;
        }
        if (slack != 1)
        {
            throw GridError(Code::InvalidData, fmt::format("grid must have exactly one slack bus, found {}", slack));
        }
        for (const auto &br : branches)
        {
            bus_index(br.from);
            bus_index(br.to);
            if (br.from == br.to)
            {
                throw GridError(Code::InvalidData, fmt::format("branch {}-{} is a self loop", br.from, br.to));
            }
            if (br.r == 0.0 && br.x == 0.0)
            {
                throw GridError(Code::InvalidData, fmt::format("branch {}-{} has zero impedance", br.from, br.to));
            }
            if (!(br.tap > 0.0))
            {
                throw GridError(Code::InvalidData, fmt::format("branch {}-{} has non-positive tap", br.from, br.to));
            }
        }
        std::set<std::string> gen_ids;
        for (const auto &g : generators)
        {
            if (!gen_ids.insert(g.id).second)
            {
                throw GridError(Code::InvalidData, "duplicate generator id '" + g.id + "'");
            }
            bus_index(g.bus);
            if (!(g.inertia > 0.0))
            {
                throw GridError(Code::InvalidData, "generator '" + g.id + "': H must be > 0");
            }
            if (!(g.xd_prime > 0.0))
            {
                throw GridError(Code::InvalidData, "generator '" + g.id + "': xd' must be > 0");
            }
            if (!(g.governor.droop > 0.0) || !(g.governor.time_constant > 0.0))
            {
                throw GridError(Code::InvalidData, "generator '" + g.id + "': governor R and Tg must be > 0");
            }
            if (g.governor.pmin > g.governor.pmax)
            {
                throw GridError(Code::InvalidData, "generator '" + g.id + "': pmin > pmax");
            }
            if (g.agc_participation < 0.0)
            {
                throw GridError(Code::InvalidData, "generator '" + g.id + "': negative participation factor");
            }
        }
    }

    namespace
    {
        BusType parse_bus_type(const detail::Doc &doc, const YAML::Node &node)
        {
            const auto s = doc.required<std::string>(node, "type");
            if (s == "slack")
            {
                return BusType::Slack;
            }
            if (s == "pv")
            {
                return BusType::PV;
            }
            if (s == "pq")
            {
                return BusType::PQ;
            }
            doc.fail(node["type"], fmt::format("unknown bus type '{}' (expected slack, pv or pq)", s));
        }

        LoadModel parse_load_model(const detail::Doc &doc, const YAML::Node &node, LoadModel fallback)
        {
            const auto s = doc.optional<std::string>(node, "load_model", "");
            if (s.empty())
            {
                return fallback;
            }
            if (s == "constant_impedance")
            {
                return LoadModel::ConstantImpedance;
            }
            if (s == "constant_power")
            {
                return LoadModel::ConstantPower;
            }
            doc.fail(node["load_model"], fmt::format("unknown load model '{}'", s));
        }
    } // namespace

    Grid load_grid(const std::filesystem::path &path)
    {
        detail::Doc doc;
        const YAML::Node root = detail::load_yaml(path, doc);
        Grid grid;
        grid.base_mva = doc.optional<double>(root, "base_mva", 100.0);
        grid.base_hz = doc.optional<double>(root, "frequency_hz", 60.0);
        if (!(grid.base_mva > 0.0))
        {
            doc.fail(root["base_mva"], "base_mva must be > 0");
        }
        const LoadModel default_model = parse_load_model(doc, root, LoadModel::ConstantImpedance);
        const double base = grid.base_mva;

        for (const auto &node : doc.sequence(root, "buses"))
        {
            Bus b;
            b.id = doc.required<int>(node, "id");
            b.type = parse_bus_type(doc, node);
            b.v_set = doc.optional<double>(node, "v", 1.0);
            b.load_p = doc.optional<double>(node, "load_mw", 0.0) / base;
            b.load_q = doc.optional<double>(node, "load_mvar", 0.0) / base;
            b.shunt_g = doc.optional<double>(node, "gs_mw", 0.0) / base;
            b.shunt_b = doc.optional<double>(node, "bs_mvar", 0.0) / base;
            b.load_model = parse_load_model(doc, node, default_model);
            grid.buses.push_back(b);
        }
        for (const auto &node : doc.sequence(root, "branches"))
        {
            Branch br;
            br.from = doc.required<int>(node, "from");
            br.to = doc.required<int>(node, "to");
            br.r = doc.optional<double>(node, "r", 0.0);
            br.x = doc.optional<double>(node, "x", 0.0);
            br.b = doc.optional<double>(node, "b", 0.0);
            br.tap = doc.optional<double>(node, "tap", 1.0);
            br.in_service = doc.optional<bool>(node, "in_service", true);
            grid.branches.push_back(br);
        }
        for (const auto &node : doc.sequence(root, "generators"))
        {
            SyncGenerator g;
            g.id = doc.required<std::string>(node, "id");
            g.bus = doc.required<int>(node, "bus");
            g.p_set = doc.optional<double>(node, "p_mw", 0.0) / base;
            g.inertia = doc.required<double>(node, "h");
            g.damping = doc.optional<double>(node, "d", 0.0);
            g.xd_prime = doc.required<double>(node, "xd_prime");
            g.governor.droop = doc.optional<double>(node, "droop", 0.05);
            g.governor.time_constant = doc.optional<double>(node, "tg", 0.5);
            g.governor.pmax = doc.optional<double>(node, "pmax_mw", 1e9) / base;
            g.governor.pmin = doc.optional<double>(node, "pmin_mw", 0.0) / base;
            g.governor.enabled = doc.optional<bool>(node, "governor", true);
            g.agc_participation = doc.optional<double>(node, "beta", 0.0);
            grid.generators.push_back(g);
        }
        try
        {
            grid.validate();
        }
        catch (const GridError &e)
        {
            throw ConfigError(fmt::format("{}: {}", doc.file, e.what()));
        }
        return grid;
    }
} // namespace tdcosim::transmission
