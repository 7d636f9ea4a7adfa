#include "tdcosim/distribution/feeder.hpp"

#include "common/yaml_helpers.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <unordered_map>

namespace tdcosim::distribution
{
    using Code = DistributionError::Code;

    int phase_count(PhaseMask m)
    {
        return has_phase(m, 0) + has_phase(m, 1) + has_phase(m, 2);
    }

    PhaseMask parse_phases(std::string_view text)
    {
        PhaseMask m = 0;
        for (char c : text)
        {
            switch (c)
            {
            case 'a':
            case 'A':
                m |= kPhaseA;
                break;
            case 'b':
            case 'B':
                m |= kPhaseB;
                break;
            case 'c':
            case 'C':
                m |= kPhaseC;
                break;
            default:
                throw DistributionError(Code::InvalidFeeder, fmt::format("invalid phase letter '{}' in '{}'", c, text));
            }
        }
        if (m == 0)
        {
            throw DistributionError(Code::InvalidFeeder, "empty phase set");
        }
        return m;
    }

    std::string phase_string(PhaseMask m)
    {
        std::string s;
        for (int ph = 0; ph < 3; ++ph)
        {
            if (has_phase(m, ph))
            {
                s += static_cast<char>('a' + ph);
            }
        }
        return s;
    }

    double FeederNetwork::v_base() const
    {
        return base_kv * 1000.0 / std::sqrt(3.0);
    }

    std::size_t FeederNetwork::node_index(std::string_view id) const
    {
        for (std::size_t i = 0; i < nodes.size(); ++i)
        {
            if (nodes[i].id == id)
            {
                return i;
            }
        }
        throw DistributionError(Code::UnknownElement, fmt::format("feeder '{}' has no node '{}'", name, id));
    }

    std::size_t FeederNetwork::der_index(std::string_view id) const
    {
        for (std::size_t i = 0; i < ders.size(); ++i)
        {
            if (ders[i].id == id)
            {
                return i;
            }
        }
        throw DistributionError(Code::UnknownElement, fmt::format("feeder '{}' has no DER '{}'", name, id));
    }

    bool FeederNetwork::radial() const
    {
        return branches.size() + 1 == nodes.size();
    }

    double FeederNetwork::total_load_kw() const
    {
        double p = 0.0;
        for (const auto &l : loads)
        {
            for (const auto &s : l.s_kva)
            {
                p += s.real();
            }
        }
        return p;
    }

    void FeederNetwork::finalize()
    {
        const std::size_t n = nodes.size();
        if (n == 0)
        {
            throw DistributionError(Code::InvalidFeeder, fmt::format("feeder '{}' has no nodes", name));
        }
        if (substation >= n)
        {
            throw DistributionError(Code::InvalidFeeder, fmt::format("feeder '{}': substation node out of range", name));
        }
        if (!(base_kv > 0.0) || !(base_kva > 0.0))
        {
            throw DistributionError(Code::InvalidFeeder, fmt::format("feeder '{}': bases must be positive", name));
        }
        {
            std::unordered_map<std::string, std::size_t> seen;
            for (std::size_t i = 0; i < n; ++i)
            {
                if (!seen.emplace(nodes[i].id, i).second)
                {
                    throw DistributionError(Code::InvalidFeeder,
                                            fmt::format("feeder '{}': duplicate node '{}'", name, nodes[i].id));
                }
            }
        }
        std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n); // (neighbor, branch)
        for (std::size_t k = 0; k < branches.size(); ++k)
        {
            const auto &br = branches[k];
            if (br.from >= n || br.to >= n || br.from == br.to)
            {
                throw DistributionError(Code::InvalidFeeder, fmt::format("feeder '{}': branch {} has bad endpoints", name, k));
            }
            if ((br.phases & nodes[br.from].phases) != br.phases || (br.phases & nodes[br.to].phases) != br.phases)
            {
                throw DistributionError(Code::InvalidFeeder,
                                        fmt::format("feeder '{}': branch {}->{} phases '{}' not present at both ends", name,
                                                    nodes[br.from].id, nodes[br.to].id, phase_string(br.phases)));
            }
            adj[br.from].emplace_back(br.to, k);
            adj[br.to].emplace_back(br.from, k);
        }

        order.clear();
        parent_branch.assign(n, -1);
        std::vector<bool> seen(n, false);
        std::queue<std::size_t> q;
        q.push(substation);
        seen[substation] = true;
        while (!q.empty())
        {
            const auto i = q.front();
            q.pop();
            order.push_back(i);
            for (const auto &[j, k] : adj[i])
            {
                if (!seen[j])
                {
                    seen[j] = true;
                    parent_branch[j] = static_cast<std::ptrdiff_t>(k);
                    q.push(j);
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i)
        {
            if (!seen[i])
            {
                throw DistributionError(Code::InvalidFeeder,
                                        fmt::format("feeder '{}': node '{}' is not connected to the substation", name,
                                                    nodes[i].id));
            }
        }
        // A radial node's phases come from its parent branch.
        for (std::size_t i = 0; i < n; ++i)
        {
            if (i != substation && radial())
            {
                const auto &br = branches[static_cast<std::size_t>(parent_branch[i])];
                if (br.phases != nodes[i].phases)
                {
                    throw DistributionError(Code::InvalidFeeder,
                                            fmt::format("feeder '{}': node '{}' phases '{}' differ from its supply '{}'",
                                                        name, nodes[i].id, phase_string(nodes[i].phases),
                                                        phase_string(br.phases)));
                }
            }
        }

        node_load_kva.assign(n, PhaseArray{});
        for (const auto &l : loads)
        {
            if (l.node >= n)
            {
                throw DistributionError(Code::InvalidFeeder, fmt::format("feeder '{}': load on unknown node", name));
            }
            for (int ph = 0; ph < 3; ++ph)
            {
                const auto p = static_cast<std::size_t>(ph);
                if (l.s_kva[p] != Complex(0.0, 0.0) && !has_phase(nodes[l.node].phases, ph))
                {
                    throw DistributionError(Code::InvalidFeeder,
                                            fmt::format("feeder '{}': load on missing phase {} of node '{}'", name,
                                                        static_cast<char>('a' + ph), nodes[l.node].id));
                }
                node_load_kva[l.node][p] += l.s_kva[p];
            }
        }
        std::unordered_map<std::string, int> der_ids;
        for (const auto &d : ders)
        {
            if (d.node >= n || (d.phases & nodes[d.node].phases) != d.phases)
            {
                throw DistributionError(Code::InvalidFeeder,
                                        fmt::format("feeder '{}': DER '{}' is bound to missing node phases", name, d.id));
            }
            if (der_ids[d.id]++ > 0)
            {
                throw DistributionError(Code::InvalidFeeder, fmt::format("feeder '{}': duplicate DER '{}'", name, d.id));
            }
            if (!(d.p_caps_mw > 0.0) || d.p_ref_mw < 0.0)
            {
                throw DistributionError(Code::InvalidFeeder,
                                        fmt::format("feeder '{}': DER '{}' needs p_caps_mw > 0 and p_ref_mw >= 0", name, d.id));
            }
        }
    }

    namespace
    {
        const std::array<Complex, 3> kShift = {Complex(1.0, 0.0), std::polar(1.0, -2.0 * std::numbers::pi / 3.0),
                                                std::polar(1.0, 2.0 * std::numbers::pi / 3.0)};

        Eigen::Matrix3cd parse_z(const detail::Doc &doc, const YAML::Node &node, double length)
        {
            Eigen::Matrix3cd z = Eigen::Matrix3cd::Zero();
            if (node["z"])
            {
                const YAML::Node m = node["z"];
                if (!m.IsSequence() || m.size() != 3)
                {
                    doc.fail(m, "'z' must be a 3x3 list of [r, x] pairs");
                }
                for (std::size_t r = 0; r < 3; ++r)
                {
                    if (!m[r].IsSequence() || m[r].size() != 3)
                    {
                        doc.fail(m, "'z' must be a 3x3 list of [r, x] pairs");
                    }
                    for (std::size_t c = 0; c < 3; ++c)
                    {
                        const auto pair = doc.as<std::vector<double>>(m[r][c], "z");
                        if (pair.size() != 2)
                        {
                            doc.fail(m[r][c], "impedance entries are [r, x]");
                        }
                        z(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = Complex(pair[0], pair[1]);
                    }
                }
            }
            else
            {
                const Complex self(doc.optional<double>(node, "r", 0.0), doc.optional<double>(node, "x", 0.0));
                const Complex mutual(doc.optional<double>(node, "r_mutual", 0.0), doc.optional<double>(node, "x_mutual", 0.0));
                z.setConstant(mutual);
                z.diagonal().setConstant(self);
            }
            return z * length;
        }

        PhaseArray parse_phase_values(const detail::Doc &doc, const YAML::Node &node, const char *key, PhaseMask phases)
        {
            PhaseArray out{};
            const YAML::Node v = node[key];
            if (!v)
            {
                return out;
            }
            std::vector<double> vals;
            if (v.IsSequence())
            {
                vals = doc.as<std::vector<double>>(v, key);
                if (static_cast<int>(vals.size()) != phase_count(phases))
                {
                    doc.fail(v, fmt::format("'{}' needs one value per phase ({})", key, phase_string(phases)));
                }
            }
            else
            {
                const double total = doc.as<double>(v, key);
                vals.assign(static_cast<std::size_t>(phase_count(phases)), total / phase_count(phases));
            }
            std::size_t k = 0;
            for (int ph = 0; ph < 3; ++ph)
            {
                if (has_phase(phases, ph))
                {
                    out[static_cast<std::size_t>(ph)] = vals[k++];
                }
            }
            return out;
        }

        PhaseMask phases_of(const detail::Doc &doc, const YAML::Node &node, PhaseMask fallback)
        {
            if (!node["phases"])
            {
                return fallback;
            }
            try
            {
                return parse_phases(doc.as<std::string>(node["phases"], "phases"));
            }
            catch (const DistributionError &e)
            {
                doc.fail(node["phases"], e.what());
            }
        }
    } // namespace

    FeederNetwork load_feeder(const std::filesystem::path &path)
    {
        detail::Doc doc;
        const YAML::Node root = detail::load_yaml(path, doc);
        FeederNetwork f;
        f.name = doc.optional<std::string>(root, "name", path.stem().string());
        f.base_kv = doc.required<double>(root, "base_kv");
        f.base_kva = doc.required<double>(root, "base_kva");

        std::unordered_map<std::string, std::size_t> index;
        for (const auto &node : doc.sequence(root, "nodes"))
        {
            FeederNode n;
            n.id = doc.required<std::string>(node, "id");
            n.phases = phases_of(doc, node, kPhaseABC);
            if (!index.emplace(n.id, f.nodes.size()).second)
            {
                doc.fail(node, fmt::format("duplicate node '{}'", n.id));
            }
            f.nodes.push_back(std::move(n));
        }
        auto lookup = [&](const YAML::Node &node, const char *key) {
            const auto id = doc.required<std::string>(node, key);
            auto it = index.find(id);
            if (it == index.end())
            {
                doc.fail(node, fmt::format("unknown node '{}'", id));
            }
            return it->second;
        };

        const YAML::Node sub = root["substation"];
        if (!sub || !sub.IsMap())
        {
            doc.fail(root, "missing 'substation: {node, tap}'");
        }
        f.substation = lookup(sub, "node");
        f.source_tap = doc.optional<double>(sub, "tap", 1.0);

        const YAML::Node codes = root["linecodes"];
        for (const auto &node : doc.sequence(root, "branches"))
        {
            FeederBranch br;
            br.from = lookup(node, "from");
            br.to = lookup(node, "to");
            br.phases = phases_of(doc, node, f.nodes[br.to].phases);
            const double length = doc.optional<double>(node, "length", 1.0);
            if (node["linecode"])
            {
                const auto code = doc.as<std::string>(node["linecode"], "linecode");
                if (!codes || !codes[code])
                {
                    doc.fail(node["linecode"], fmt::format("unknown linecode '{}'", code));
                }
                br.z = parse_z(doc, codes[code], length);
                br.ampacity = doc.optional<double>(codes[code], "ampacity", 0.0);
            }
            else
            {
                br.z = parse_z(doc, node, length);
            }
            br.ampacity = doc.optional<double>(node, "ampacity", br.ampacity);
            for (int r = 0; r < 3; ++r)
            {
                for (int c = 0; c < 3; ++c)
                {
                    if (!has_phase(br.phases, r) || !has_phase(br.phases, c))
                    {
                        br.z(r, c) = 0.0;
                    }
                }
            }
            f.branches.push_back(br);
        }

        for (const auto &node : doc.sequence(root, "loads", false))
        {
            FeederLoad l;
            l.node = lookup(node, "node");
            const PhaseMask ph = phases_of(doc, node, f.nodes[l.node].phases);
            const auto p = parse_phase_values(doc, node, "kw", ph);
            const auto q = parse_phase_values(doc, node, "kvar", ph);
            for (std::size_t k = 0; k < 3; ++k)
            {
                l.s_kva[k] = Complex(p[k].real(), q[k].real());
            }
            f.loads.push_back(l);
        }

        for (const auto &node : doc.sequence(root, "ders", false))
        {
            FeederDer d;
            d.id = doc.required<std::string>(node, "id");
            d.node = lookup(node, "node");
            d.phases = phases_of(doc, node, f.nodes[d.node].phases);
            d.p_caps_mw = doc.required<double>(node, "p_caps_mw");
            d.p_ref_mw = doc.required<double>(node, "p_ref_mw");
            auto opt = [&](const char *key) -> std::optional<double> {
                if (node[key])
                {
                    return doc.as<double>(node[key], key);
                }
                return std::nullopt;
            };
            d.tg = opt("tg");
            d.d_dn = opt("d_dn");
            d.db_uf = opt("db_uf");
            d.db_of = opt("db_of");
            d.mppt_mw = opt("mppt_mw");
            if (node["mppt_file"])
            {
                d.mppt_file = path.parent_path() / doc.as<std::string>(node["mppt_file"], "mppt_file");
            }
            f.ders.push_back(std::move(d));
        }

        try
        {
            f.finalize();
        }
        catch (const DistributionError &e)
        {
            throw ConfigError(fmt::format("{}: {}", doc.file, e.what()));
        }
        return f;
    }

    PhaseArray balanced_source(Complex v_pos_pu)
    {
        return {v_pos_pu * kShift[0], v_pos_pu * kShift[1], v_pos_pu * kShift[2]};
    }

    namespace
    {
        struct Injections
        {
            std::vector<PhaseArray> s_va; // per node, load minus DER, VA
            std::vector<PhaseArray> der_va;
        };

        Injections node_powers(const FeederNetwork &f, std::span<const double> der_p_mw, double mult)
        {
            if (der_p_mw.size() != f.ders.size())
            {
                throw DistributionError(Code::InvalidFeeder,
                                        fmt::format("feeder '{}' has {} DERs but {} outputs were given", f.name,
                                                    f.ders.size(), der_p_mw.size()));
            }
            Injections inj;
            inj.s_va.resize(f.nodes.size());
            inj.der_va.assign(f.nodes.size(), PhaseArray{});
            for (std::size_t i = 0; i < f.nodes.size(); ++i)
            {
                for (std::size_t p = 0; p < 3; ++p)
                {
                    inj.s_va[i][p] = f.node_load_kva[i][p] * (1000.0 * mult);
                }
            }
            for (std::size_t k = 0; k < f.ders.size(); ++k)
            {
                const auto &d = f.ders[k];
                const double share = der_p_mw[k] * 1e6 / phase_count(d.phases);
                for (int ph = 0; ph < 3; ++ph)
                {
                    if (has_phase(d.phases, ph))
                    {
                        inj.der_va[d.node][static_cast<std::size_t>(ph)] += share;
                        inj.s_va[d.node][static_cast<std::size_t>(ph)] -= share;
                    }
                }
            }
            return inj;
        }

        Complex load_current(Complex s, Complex v, double zfrac, Complex v_nom)
        {
            if (v == Complex(0.0, 0.0))
            {
                return {0.0, 0.0};
            }
            if (zfrac <= 0.0)
            {
                return std::conj(s / v);
            }
            // Constant-impedance share drawn at nominal magnitude.
            const double vn = std::abs(v_nom);
            const Complex sz = s * zfrac;
            const Complex y = std::conj(sz) / (vn * vn);
            return std::conj((s - sz) / v) + y * v;
        }

        void finish_solution(const FeederNetwork &f, const Injections &inj, const PhaseArray &src, FeederSolution &sol)
        {
            const auto root = f.substation;
            PhaseArray out{};
            for (std::size_t k = 0; k < f.branches.size(); ++k)
            {
                const auto &br = f.branches[k];
                if (br.from == root)
                {
                    for (std::size_t p = 0; p < 3; ++p)
                    {
                        out[p] += sol.i[k][p];
                    }
                }
                else if (br.to == root)
                {
                    for (std::size_t p = 0; p < 3; ++p)
                    {
                        out[p] -= sol.i[k][p];
                    }
                }
            }
            for (std::size_t p = 0; p < 3; ++p)
            {
                const Complex s_out = src[p] * std::conj(out[p]);
                sol.s_abc[p] = (s_out + inj.s_va[root][p]) * 1e-6;
                Complex der_total(0.0, 0.0);
                for (const auto &row : inj.der_va)
                {
                    der_total += row[p];
                }
                sol.s_gross[p] = sol.s_abc[p] + der_total * 1e-6;
            }
        }

        FeederSolution sweep(const FeederNetwork &f, const Injections &inj, const PhaseArray &src,
                             const SolveOptions &opt, const FeederSolution *warm)
        {
            const std::size_t n = f.nodes.size();
            FeederSolution sol;
            sol.v_base = f.v_base();
            if (warm && warm->v.size() == n && !warm->used_ybus)
            {
                sol.v = warm->v;
                for (std::size_t p = 0; p < 3; ++p)
                {
                    if (has_phase(f.nodes[f.substation].phases, static_cast<int>(p)))
                    {
                        sol.v[f.substation][p] = src[p];
                    }
                }
            }
            else
            {
                sol.v.assign(n, PhaseArray{});
                for (std::size_t i = 0; i < n; ++i)
                {
                    for (int ph = 0; ph < 3; ++ph)
                    {
                        if (has_phase(f.nodes[i].phases, ph))
                        {
                            sol.v[i][static_cast<std::size_t>(ph)] = src[static_cast<std::size_t>(ph)];
                        }
                    }
                }
            }
            sol.i.assign(f.branches.size(), PhaseArray{});
            std::vector<PhaseArray> node_i(n);

            auto backward = [&] {
                for (std::size_t i = 0; i < n; ++i)
                {
                    for (std::size_t p = 0; p < 3; ++p)
                    {
                        node_i[i][p] = load_current(inj.s_va[i][p], sol.v[i][p], opt.impedance_fraction, src[p]);
                    }
                }
                for (auto it = f.order.rbegin(); it != f.order.rend(); ++it)
                {
                    const auto node = *it;
                    if (node == f.substation)
                    {
                        continue;
                    }
                    const auto k = static_cast<std::size_t>(f.parent_branch[node]);
                    const auto &br = f.branches[k];
                    const auto parent = br.from == node ? br.to : br.from;
                    // Positive current flows away from the substation.
                    const double dir = br.to == node ? 1.0 : -1.0;
                    for (std::size_t p = 0; p < 3; ++p)
                    {
                        const Complex total = node_i[node][p];
                        sol.i[k][p] = dir * total;
                        node_i[parent][p] += total;
                    }
                }
            };

            const double vb = sol.v_base;
            for (int it = 1; it <= opt.max_iterations; ++it)
            {
                backward();
                double dv = 0.0;
                for (const auto node : f.order)
                {
                    if (node == f.substation)
                    {
                        continue;
                    }
                    const auto k = static_cast<std::size_t>(f.parent_branch[node]);
                    const auto &br = f.branches[k];
                    const auto parent = br.from == node ? br.to : br.from;
                    const double dir = br.to == node ? 1.0 : -1.0;
                    for (int r = 0; r < 3; ++r)
                    {
                        if (!has_phase(br.phases, r))
                        {
                            continue;
                        }
                        Complex drop(0.0, 0.0);
                        for (int c = 0; c < 3; ++c)
                        {
                            if (has_phase(br.phases, c))
                            {
                                drop += br.z(r, c) * sol.i[k][static_cast<std::size_t>(c)];
                            }
                        }
                        const auto rp = static_cast<std::size_t>(r);
                        const Complex next = sol.v[parent][rp] - dir * drop;
                        dv = std::max(dv, std::abs(next - sol.v[node][rp]) / vb);
                        sol.v[node][rp] = next;
                    }
                }
                sol.iterations = it;
                sol.residual = dv;
                if (!std::isfinite(dv))
                {
                    break;
                }
                if (dv <= opt.tolerance)
                {
                    backward();
                    finish_solution(f, inj, src, sol);
                    return sol;
                }
            }
            throw DistributionError(Code::NonConvergence,
                                    fmt::format("feeder '{}': sweep did not converge in {} iterations (|dV|={:.3e} pu)",
                                                f.name, opt.max_iterations, sol.residual));
        }

        // Inverse of the branch impedance restricted to its phases.
        Eigen::Matrix3cd branch_admittance(const FeederNetwork &f, const FeederBranch &br)
        {
            std::vector<int> ph;
            for (int p = 0; p < 3; ++p)
            {
                if (has_phase(br.phases, p))
                {
                    ph.push_back(p);
                }
            }
            const auto m = static_cast<Eigen::Index>(ph.size());
            Eigen::MatrixXcd z(m, m);
            for (Eigen::Index r = 0; r < m; ++r)
            {
                for (Eigen::Index c = 0; c < m; ++c)
                {
                    z(r, c) = br.z(ph[static_cast<std::size_t>(r)], ph[static_cast<std::size_t>(c)]);
                }
            }
            Eigen::FullPivLU<Eigen::MatrixXcd> lu(z);
            if (!lu.isInvertible())
            {
                throw DistributionError(Code::InvalidFeeder,
                                        fmt::format("feeder '{}': branch {}->{} has a singular impedance; meshed feeders "
                                                    "need non-zero impedances",
                                                    f.name, f.nodes[br.from].id, f.nodes[br.to].id));
            }
            const Eigen::MatrixXcd y = lu.inverse();
            Eigen::Matrix3cd out = Eigen::Matrix3cd::Zero();
            for (Eigen::Index r = 0; r < m; ++r)
            {
                for (Eigen::Index c = 0; c < m; ++c)
                {
                    out(ph[static_cast<std::size_t>(r)], ph[static_cast<std::size_t>(c)]) = y(r, c);
                }
            }
            return out;
        }

        FeederSolution ybus_fixed_point(const FeederNetwork &f, const Injections &inj, const PhaseArray &src,
                                        const SolveOptions &opt)
        {
            const std::size_t n = f.nodes.size();
            // Unknown numbering over present node-phases excluding the substation.
            std::vector<std::array<int, 3>> slot(n, {-1, -1, -1});
            int nu = 0;
            for (std::size_t i = 0; i < n; ++i)
            {
                if (i == f.substation)
                {
                    continue;
                }
                for (int p = 0; p < 3; ++p)
                {
                    if (has_phase(f.nodes[i].phases, p))
                    {
                        slot[i][static_cast<std::size_t>(p)] = nu++;
                    }
                }
            }
            std::vector<Eigen::Matrix3cd> ybr;
            ybr.reserve(f.branches.size());
            Eigen::MatrixXcd yll = Eigen::MatrixXcd::Zero(nu, nu);
            Eigen::VectorXcd rhs_src = Eigen::VectorXcd::Zero(nu);
            for (const auto &br : f.branches)
            {
                ybr.push_back(branch_admittance(f, br));
                const auto &y = ybr.back();
                const std::size_t ends[2] = {br.from, br.to};
                for (int a = 0; a < 2; ++a)
                {
                    for (int b = 0; b < 2; ++b)
                    {
                        const double sign = a == b ? 1.0 : -1.0;
                        const auto na = ends[a];
                        const auto nb = ends[b];
                        for (int r = 0; r < 3; ++r)
                        {
                            for (int c = 0; c < 3; ++c)
                            {
                                if (!has_phase(br.phases, r) || !has_phase(br.phases, c))
                                {
                                    continue;
                                }
                                const int row = slot[na][static_cast<std::size_t>(r)];
                                if (row < 0)
                                {
                                    continue;
                                }
                                const int col = slot[nb][static_cast<std::size_t>(c)];
                                const Complex val = sign * y(r, c);
                                if (col >= 0)
                                {
                                    yll(row, col) += val;
                                }
                                else
                                {
                                    rhs_src[row] -= val * src[static_cast<std::size_t>(c)];
                                }
                            }
                        }
                    }
                }
            }
            Eigen::PartialPivLU<Eigen::MatrixXcd> lu(yll);

            FeederSolution sol;
            sol.v_base = f.v_base();
            sol.used_ybus = true;
            sol.v.assign(n, PhaseArray{});
            Eigen::VectorXcd v(nu);
            for (std::size_t i = 0; i < n; ++i)
            {
                for (std::size_t p = 0; p < 3; ++p)
                {
                    if (has_phase(f.nodes[i].phases, static_cast<int>(p)))
                    {
                        sol.v[i][p] = src[p];
                        if (slot[i][p] >= 0)
                        {
                            v[slot[i][p]] = src[p];
                        }
                    }
                }
            }
            const double vb = sol.v_base;
            bool converged = false;
            for (int it = 1; it <= opt.max_iterations; ++it)
            {
                Eigen::VectorXcd rhs = rhs_src;
                for (std::size_t i = 0; i < n; ++i)
                {
                    for (std::size_t p = 0; p < 3; ++p)
                    {
                        if (slot[i][p] >= 0)
                        {
                            rhs[slot[i][p]] -= load_current(inj.s_va[i][p], v[slot[i][p]], opt.impedance_fraction, src[p]);
                        }
                    }
                }
                const Eigen::VectorXcd next = lu.solve(rhs);
                const double dv = (next - v).cwiseAbs().maxCoeff() / vb;
                v = next;
                sol.iterations = it;
                sol.residual = dv;
                if (dv <= opt.tolerance)
                {
                    converged = true;
                    break;
                }
                if (!std::isfinite(dv))
                {
                    break;
                }
            }
            if (!converged)
            {
                throw DistributionError(Code::NonConvergence,
                                        fmt::format("feeder '{}': fixed-point solve did not converge in {} iterations "
                                                    "(|dV|={:.3e} pu)",
                                                    f.name, opt.max_iterations, sol.residual));
            }
            for (std::size_t i = 0; i < n; ++i)
            {
                for (std::size_t p = 0; p < 3; ++p)
                {
                    if (slot[i][p] >= 0)
                    {
                        sol.v[i][p] = v[slot[i][p]];
                    }
                }
            }
            sol.i.assign(f.branches.size(), PhaseArray{});
            for (std::size_t k = 0; k < f.branches.size(); ++k)
            {
                const auto &br = f.branches[k];
                for (int r = 0; r < 3; ++r)
                {
                    if (!has_phase(br.phases, r))
                    {
                        continue;
                    }
                    Complex cur(0.0, 0.0);
                    for (int c = 0; c < 3; ++c)
                    {
                        if (has_phase(br.phases, c))
                        {
                            const auto cp = static_cast<std::size_t>(c);
                            cur += ybr[k](r, c) * (sol.v[br.from][cp] - sol.v[br.to][cp]);
                        }
                    }
                    sol.i[k][static_cast<std::size_t>(r)] = cur;
                }
            }
            finish_solution(f, inj, src, sol);
            return sol;
        }
    } // namespace

    FeederSolution solve_feeder(const FeederNetwork &feeder, Complex v_sub_pu, std::span<const double> der_p_mw,
                                double load_multiplier, const SolveOptions &options, const FeederSolution *warm_start)
    {
        if (feeder.order.size() != feeder.nodes.size())
        {
            throw DistributionError(Code::InvalidFeeder, fmt::format("feeder '{}' is not finalized", feeder.name));
        }
        const Injections inj = node_powers(feeder, der_p_mw, load_multiplier);
        PhaseArray src = balanced_source(v_sub_pu * feeder.source_tap);
        for (auto &v : src)
        {
            v *= feeder.v_base();
        }
        if (feeder.radial() && !options.force_ybus)
        {
            return sweep(feeder, inj, src, options, warm_start);
        }
        return ybus_fixed_point(feeder, inj, src, options);
    }

    Complex aggregate_positive_sequence(const PhaseArray &s_abc)
    {
        return (s_abc[0] + s_abc[1] + s_abc[2]) / 3.0;
    }

    Complex positive_sequence_mva(const PhaseArray &s_abc_mva)
    {
        // Mean of per-phase pu values (base S/3) rescaled by the three-phase base.
        return 3.0 * aggregate_positive_sequence(s_abc_mva);
    }

    std::vector<Violation> check_limits(const FeederNetwork &feeder, const FeederSolution &sol, double v_min,
                                        double v_max)
    {
        std::vector<Violation> out;
        for (std::size_t i = 0; i < feeder.nodes.size(); ++i)
        {
            for (int ph = 0; ph < 3; ++ph)
            {
                if (!has_phase(feeder.nodes[i].phases, ph))
                {
                    continue;
                }
                const double v = sol.v_pu(i, ph);
                if (v < v_min)
                {
                    out.push_back({Violation::Kind::UnderVoltage, feeder.nodes[i].id, ph, v, v_min});
                }
                else if (v > v_max)
                {
                    out.push_back({Violation::Kind::OverVoltage, feeder.nodes[i].id, ph, v, v_max});
                }
            }
        }
        for (std::size_t k = 0; k < feeder.branches.size(); ++k)
        {
            const auto &br = feeder.branches[k];
            if (br.ampacity <= 0.0)
            {
                continue;
            }
            for (int ph = 0; ph < 3; ++ph)
            {
                if (!has_phase(br.phases, ph))
                {
                    continue;
                }
                const double amps = std::abs(sol.i[k][static_cast<std::size_t>(ph)]);
                if (amps > br.ampacity)
                {
                    out.push_back({Violation::Kind::Thermal,
                                   feeder.nodes[br.from].id + "->" + feeder.nodes[br.to].id, ph, amps, br.ampacity});
                }
            }
        }
        return out;
    }

    VoltageStats voltage_stats(const FeederNetwork &feeder, const FeederSolution &sol)
    {
        VoltageStats st;
        st.min = std::numeric_limits<double>::infinity();
        st.max = -std::numeric_limits<double>::infinity();
        double sum = 0.0;
        double sq = 0.0;
        for (std::size_t i = 0; i < feeder.nodes.size(); ++i)
        {
            for (int ph = 0; ph < 3; ++ph)
            {
                if (!has_phase(feeder.nodes[i].phases, ph))
                {
                    continue;
                }
                const double v = sol.v_pu(i, ph);
                sum += v;
                sq += v * v;
                st.min = std::min(st.min, v);
                st.max = std::max(st.max, v);
                ++st.count;
            }
        }
        if (st.count > 0)
        {
            st.mean = sum / static_cast<double>(st.count);
            st.std = std::sqrt(std::max(0.0, sq / static_cast<double>(st.count) - st.mean * st.mean));
        }
        return st;
    }
} // namespace tdcosim::distribution
