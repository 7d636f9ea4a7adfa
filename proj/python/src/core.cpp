#include "tdcosim/config_error.hpp"
#include "tdcosim/distribution/feeder.hpp"
#include "tdcosim/headroom/vsm.hpp"
#include "tdcosim/scenario/scenario.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
namespace sc = tdcosim::scenario;
namespace dist = tdcosim::distribution;
namespace hr = tdcosim::headroom;

namespace
{
    py::array_t<double> arr(const std::vector<double> &v)
    {
        return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
    }

    template <class T, class F>
    py::array_t<double> column(const std::vector<T> &rows, F f)
    {
        std::vector<double> v;
        v.reserve(rows.size());
        for (const auto &r : rows)
        {
            v.push_back(f(r));
        }
        return arr(v);
    }

    py::dict stats_dict(double mean, double std, double min, double max, std::size_t count)
    {
        py::dict d;
        d["mean"] = mean;
        d["std"] = std;
        d["min"] = min;
        d["max"] = max;
        d["count"] = count;
        return d;
    }

    py::dict der_dict(const sc::DerTrace &d)
    {
        py::dict out;
        out["feeder"] = d.feeder;
        out["t"] = column(d.samples, [](const auto &s) { return s.t; });
        out["p_out_mw"] = column(d.samples, [](const auto &s) { return s.p_out; });
        out["p_drp_mw"] = column(d.samples, [](const auto &s) { return s.p_drp; });
        out["p_ext_mw"] = column(d.samples, [](const auto &s) { return s.p_ext; });
        out["p_mppt_mw"] = column(d.samples, [](const auto &s) { return s.p_mppt; });
        out["p_cmd_mw"] = column(d.samples, [](const auto &s) { return s.p_cmd; });
        out["vsm_limit_mw"] = column(d.samples, [](const auto &s) { return s.vsm_limit; });
        return out;
    }

    py::dict feeder_dict(const sc::FeederTrace &f)
    {
        py::dict out;
        out["bus"] = f.bus;
        out["t"] = column(f.voltage, [](const auto &s) { return s.t; });
        out["v_mean_pu"] = column(f.voltage, [](const auto &s) { return s.stats.mean; });
        out["v_std_pu"] = column(f.voltage, [](const auto &s) { return s.stats.std; });
        out["v_min_pu"] = column(f.voltage, [](const auto &s) { return s.stats.min; });
        out["v_max_pu"] = column(f.voltage, [](const auto &s) { return s.stats.max; });
        out["t_substation"] = column(f.substation, [](const auto &s) { return s.t; });
        out["p_net_mw"] = column(f.substation, [](const auto &s) { return s.s_net_mva.real(); });
        out["q_net_mvar"] = column(f.substation, [](const auto &s) { return s.s_net_mva.imag(); });
        out["max_sweeps"] = f.max_sweeps;
        out["max_residual"] = f.max_residual;
        return out;
    }
} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Transmission and distribution frequency co-simulation";

    py::register_exception<tdcosim::ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::class_<sc::Scenario>(m, "Scenario")
        .def_readonly("name", &sc::Scenario::name)
        .def_readwrite("stop_time", &sc::Scenario::stop_time)
        .def_readwrite("log_dt", &sc::Scenario::log_dt)
        .def_property_readonly("source", [](const sc::Scenario &s) { return s.source; })
        .def_property_readonly("grid_file", [](const sc::Scenario &s) { return s.grid_file; })
        .def_property(
            "output_dir", [](const sc::Scenario &s) { return s.output_dir; },
            [](sc::Scenario &s, const std::filesystem::path &p) { s.output_dir = p; })
        .def_property_readonly("seed", [](const sc::Scenario &s) { return s.noise.seed; })
        .def(
            "apply_overrides",
            [](sc::Scenario &s, std::optional<std::uint64_t> seed, std::optional<double> stop_time, bool no_agc,
               std::optional<std::filesystem::path> output_dir)
            {
                sc::Overrides o;
                o.seed = seed;
                o.stop_time = stop_time;
                o.no_agc = no_agc;
                o.output_dir = output_dir;
                sc::apply_overrides(s, o);
            },
            py::arg("seed") = py::none(), py::arg("stop_time") = py::none(), py::arg("no_agc") = false,
            py::arg("output_dir") = py::none())
        .def_property(
            "noise_std", [](const sc::Scenario &s) { return s.noise.std; },
            [](sc::Scenario &s, double v) { s.noise.std = v; })
        .def_property(
            "agc_enabled", [](const sc::Scenario &s) { return s.agc.enabled; },
            [](sc::Scenario &s, bool v) { s.agc.enabled = v; })
        .def_property(
            "headroom_enabled", [](const sc::Scenario &s) { return s.headroom.enabled; },
            [](sc::Scenario &s, bool v) { s.headroom.enabled = v; })
        .def_property_readonly("internal_dt", [](const sc::Scenario &s) { return s.cadences.internal_dt; })
        .def_property_readonly("feeders",
                               [](const sc::Scenario &s)
                               {
                                   py::list out;
                                   for (const auto &f : s.feeders)
                                   {
                                       out.append(py::make_tuple(f.name, f.bus));
                                   }
                                   return out;
                               })
        .def_property_readonly("der_ids",
                               [](const sc::Scenario &s)
                               {
                                   std::vector<std::string> out;
                                   for (const auto &n : s.networks)
                                   {
                                       for (const auto &d : n.ders)
                                       {
                                           out.push_back(d.id);
                                       }
                                   }
                                   return out;
                               })
        .def("__repr__", [](const sc::Scenario &s)
             { return "<Scenario " + s.name + ", " + std::to_string(s.feeders.size()) + " feeders>"; });

    py::class_<sc::RunResults>(m, "RunResults")
        .def_readonly("scenario", &sc::RunResults::scenario)
        .def_property_readonly("t", [](const sc::RunResults &r) { return arr(r.t); })
        .def_property_readonly("freq_hz", [](const sc::RunResults &r) { return arr(r.freq_hz); })
        .def_property_readonly("t_ace", [](const sc::RunResults &r) { return arr(r.t_ace); })
        .def_property_readonly("ace_mw", [](const sc::RunResults &r) { return arr(r.ace_mw); })
        .def_property_readonly("agc_signal_mw", [](const sc::RunResults &r) { return arr(r.agc_signal_mw); })
        .def_property_readonly("ders",
                               [](const sc::RunResults &r)
                               {
                                   py::dict out;
                                   for (const auto &d : r.ders)
                                   {
                                       out[py::str(d.id)] = der_dict(d);
                                   }
                                   return out;
                               })
        .def_property_readonly("feeders",
                               [](const sc::RunResults &r)
                               {
                                   py::dict out;
                                   for (const auto &f : r.feeders)
                                   {
                                       out[py::str(f.name)] = feeder_dict(f);
                                   }
                                   return out;
                               })
        .def_property_readonly("events",
                               [](const sc::RunResults &r)
                               {
                                   py::list out;
                                   for (const auto &e : r.events)
                                   {
                                       out.append(py::make_tuple(e.t, e.kind, e.detail));
                                   }
                                   return out;
                               })
        .def_property_readonly("freq_stats",
                               [](const sc::RunResults &r)
                               {
                                   const auto &s = r.freq_stats;
                                   return stats_dict(s.mean, s.std, s.min, s.max, s.count);
                               })
        .def_property_readonly("ace_stats",
                               [](const sc::RunResults &r)
                               {
                                   const auto &s = r.ace_stats;
                                   return stats_dict(s.mean, s.std, s.min, s.max, s.count);
                               })
        .def_property_readonly("limit_violations", [](const sc::RunResults &r) { return r.limits.violations; })
        .def_property_readonly("limit_steps_checked", [](const sc::RunResults &r) { return r.limits.steps_checked; })
        .def_readonly("internal_steps", &sc::RunResults::internal_steps)
        .def_readonly("wall_seconds", &sc::RunResults::wall_seconds)
        .def("summary", &sc::summary_table);

    m.def("load_scenario", &sc::load_scenario, py::arg("path"));
    m.def(
        "run",
        [](const sc::Scenario &s)
        {
            py::gil_scoped_release release;
            return sc::run(s);
        },
        py::arg("scenario"));
    m.def("emit_outputs", &sc::emit_outputs, py::arg("results"), py::arg("dir"));
    m.def(
        "render_plots",
        [](const std::filesystem::path &dir) { return sc::render_plots(dir); }, py::arg("dir"));
    m.def("generate_load_series", &sc::generate_load_series, py::arg("seed"), py::arg("std"), py::arg("n_steps"));
    m.def("derive_seed", &sc::derive_seed, py::arg("seed"), py::arg("stream"));

    m.def(
        "solve_feeder",
        [](const std::filesystem::path &path, std::optional<std::vector<double>> der_p_mw, double v_sub_pu,
           double load_multiplier)
        {
            const auto net = dist::load_feeder(path);
            std::vector<double> p = der_p_mw.value_or(std::vector<double>{});
            if (!der_p_mw)
            {
                for (const auto &d : net.ders)
                {
                    p.push_back(d.p_ref_mw);
                }
            }
            if (p.size() != net.ders.size())
            {
                throw py::value_error("der_p_mw needs one entry per feeder DER");
            }
            const auto sol = dist::solve_feeder(net, {v_sub_pu, 0.0}, p, load_multiplier);
            py::dict volts;
            for (std::size_t n = 0; n < net.nodes.size(); ++n)
            {
                py::list ph;
                for (int k = 0; k < 3; ++k)
                {
                    if (dist::has_phase(net.nodes[n].phases, k))
                    {
                        ph.append(sol.v_pu(n, k));
                    }
                    else
                    {
                        ph.append(py::none());
                    }
                }
                volts[py::str(net.nodes[n].id)] = ph;
            }
            const auto s = dist::positive_sequence_mva(sol.s_abc);
            py::dict out;
            out["v_pu"] = volts;
            out["p_mw"] = s.real();
            out["q_mvar"] = s.imag();
            out["iterations"] = sol.iterations;
            out["residual"] = sol.residual;
            return out;
        },
        py::arg("path"), py::arg("der_p_mw") = py::none(), py::arg("v_sub_pu") = 1.0,
        py::arg("load_multiplier") = 1.0);

    m.def(
        "feeder_headroom",
        [](const std::filesystem::path &path, std::optional<std::vector<double>> der_p_mw, double v_sub_pu,
           double v_lo, double v_hi)
        {
            const auto net = dist::load_feeder(path);
            hr::OperatingPoint op;
            op.v_sub_pu = {v_sub_pu, 0.0};
            hr::HeadroomLimits lim;
            lim.v_lo = v_lo;
            lim.v_hi = v_hi;
            lim.p_cap.resize(static_cast<Eigen::Index>(net.ders.size()));
            for (std::size_t k = 0; k < net.ders.size(); ++k)
            {
                op.der_p_mw.push_back(net.ders[k].p_ref_mw);
                lim.p_cap[static_cast<Eigen::Index>(k)] = net.ders[k].p_caps_mw;
            }
            if (der_p_mw)
            {
                if (der_p_mw->size() != net.ders.size())
                {
                    throw py::value_error("der_p_mw needs one entry per feeder DER");
                }
                op.der_p_mw = *der_p_mw;
            }
            const auto v = hr::compute_headroom(net, op, lim);
            py::dict out;
            out["status"] = hr::to_string(v.result.status);
            out["headroom_mw"] = v.result.headroom;
            std::vector<double> dp(v.result.delta_p.data(), v.result.delta_p.data() + v.result.delta_p.size());
            out["delta_p_mw"] = arr(dp);
            out["binding"] = v.result.binding;
            out["refinements"] = v.refinements;
            return out;
        },
        py::arg("path"), py::arg("der_p_mw") = py::none(), py::arg("v_sub_pu") = 1.0, py::arg("v_lo") = 0.95, py::arg("v_hi") = 1.05);
}
