#include "tdcosim/scenario/scenario.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tdcosim::scenario
{
    namespace fs = std::filesystem;

    namespace
    {
        // Shortest round-trip text so the files reproduce the in-memory values exactly.
        std::string num(double v) { return fmt::format("{}", v); }

        void write_file(const fs::path &path, const std::string &text)
        {
            std::ofstream out(path, std::ios::binary);
            if (!out)
            {
                throw std::runtime_error(fmt::format("cannot write {}", path.string()));
            }
            out << text;
        }

        std::string stats_row(const char *name, const SeriesStats &s)
        {
            return fmt::format("{:<14} {:>16.9g} {:>14.6g} {:>16.9g} {:>16.9g} {:>8}\n", name, s.mean, s.std, s.min,
                               s.max, s.count);
        }

        std::string histogram(std::span<const double> values, int bins)
        {
            std::string out = "bin_lo_hz,bin_hi_hz,count\n";
            if (values.empty())
            {
                return out;
            }
            const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
            double lo = *lo_it;
            double hi = *hi_it;
            if (hi - lo < 1e-9)
            {
                lo -= 5e-4;
                hi += 5e-4;
            }
            const double w = (hi - lo) / bins;
            std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
            for (const double v : values)
            {
                auto k = static_cast<int>((v - lo) / w);
                k = std::clamp(k, 0, bins - 1);
                ++counts[static_cast<std::size_t>(k)];
            }
            for (int k = 0; k < bins; ++k)
            {
                out += fmt::format("{},{},{}\n", num(lo + k * w), num(lo + (k + 1) * w), counts[static_cast<std::size_t>(k)]);
            }
            return out;
        }
    } // namespace

    std::string summary_table(const RunResults &r)
    {
        std::string out = fmt::format("scenario {}\n", r.scenario);
        out += fmt::format("{:<14} {:>16} {:>14} {:>16} {:>16} {:>8}\n", "series", "mean", "std", "min", "max", "n");
        out += stats_row("frequency_hz", r.freq_stats);
        out += stats_row("ace_mw", r.ace_stats);
        out += fmt::format("internal steps {} at dt {} s\n", r.internal_steps, num(r.internal_dt));
        out += fmt::format("der limit checks {} violations {}", r.limits.steps_checked, r.limits.violations);
        if (r.limits.violations > 0)
        {
            out += fmt::format(" worst {:.3e} MW on {} at {} s", r.limits.worst_excess, r.limits.worst_der,
                               num(r.limits.worst_time));
        }
        out += "\n";
        for (const auto &f : r.feeders)
        {
            double vmin = 1e9;
            double vmax = -1e9;
            for (const auto &v : f.voltage)
            {
                vmin = std::min(vmin, v.stats.min);
                vmax = std::max(vmax, v.stats.max);
            }
            out += fmt::format("feeder {} bus {} voltage [{:.5f}, {:.5f}] pu max sweeps {}\n", f.name, f.bus, vmin,
                               vmax, f.max_sweeps);
        }
        return out;
    }

    void emit_outputs(const RunResults &r, const fs::path &dir)
    {
        fs::create_directories(dir);

        std::string text = "t_s,freq_hz\n";
        for (std::size_t k = 0; k < r.t.size(); ++k)
        {
            text += num(r.t[k]) + "," + num(r.freq_hz[k]) + "\n";
        }
        write_file(dir / "frequency.csv", text);

        text = "t_s,ace_mw,signal_mw\n";
        for (std::size_t k = 0; k < r.t_ace.size(); ++k)
        {
            text += num(r.t_ace[k]) + "," + num(r.ace_mw[k]) + "," + num(r.agc_signal_mw[k]) + "\n";
        }
        write_file(dir / "ace.csv", text);

        for (const auto &d : r.ders)
        {
            text = "t_s,p_out_mw,p_drp_mw,p_ext_mw,p_mppt_mw,p_cmd_mw,vsm_limit_mw\n";
            for (const auto &s : d.samples)
            {
                text += fmt::format("{},{},{},{},{},{},{}\n", num(s.t), num(s.p_out), num(s.p_drp), num(s.p_ext),
                                    num(s.p_mppt), num(s.p_cmd), num(s.vsm_limit));
            }
            write_file(dir / fmt::format("der_{}.csv", d.id), text);
        }

        std::string sub = "t_s,feeder,bus,load_multiplier,v_pu,p_net_mw,q_net_mvar,p_gross_mw,q_gross_mvar\n";
        for (const auto &f : r.feeders)
        {
            text = "t_s,mean_pu,std_pu,min_pu,max_pu\n";
            for (const auto &v : f.voltage)
            {
                text += fmt::format("{},{},{},{},{}\n", num(v.t), num(v.stats.mean), num(v.stats.std),
                                    num(v.stats.min), num(v.stats.max));
            }
            write_file(dir / fmt::format("feeder_{}_voltage.csv", f.name), text);
            for (const auto &s : f.substation)
            {
                sub += fmt::format("{},{},{},{},{},{},{},{},{}\n", num(s.t), f.name, f.bus, num(s.load_multiplier),
                                   num(std::abs(s.v_pu)), num(s.s_net_mva.real()), num(s.s_net_mva.imag()),
                                   num(s.s_gross_mva.real()), num(s.s_gross_mva.imag()));
            }
        }
        write_file(dir / "substation.csv", sub);

        text = "t_s,kind,detail\n";
        for (const auto &e : r.events)
        {
            text += fmt::format("{},{},\"{}\"\n", num(e.t), e.kind, e.detail);
        }
        write_file(dir / "events.csv", text);

        write_file(dir / "summary.txt", summary_table(r));
        write_file(dir / "frequency_histogram.csv", histogram(r.freq_hz, 40));
        write_file(dir / "federation_log.txt", r.federation_log.to_text());
        write_file(dir / "run_time.txt", fmt::format("wall_seconds {:.3f}\n", r.wall_seconds));
    }

    namespace
    {
        struct Table
        {
            std::vector<std::string> header;
            std::vector<std::vector<double>> columns;
        };

        Table read_csv(const fs::path &path)
        {
            std::ifstream in(path);
            if (!in)
            {
                throw std::runtime_error(fmt::format("cannot read {}", path.string()));
            }
            Table t;
            std::string line;
            std::getline(in, line);
            std::stringstream hs(line);
            for (std::string cell; std::getline(hs, cell, ',');)
            {
                t.header.push_back(cell);
            }
            t.columns.resize(t.header.size());
            while (std::getline(in, line))
            {
                std::stringstream ls(line);
                std::size_t c = 0;
                for (std::string cell; std::getline(ls, cell, ',') && c < t.columns.size(); ++c)
                {
                    t.columns[c].push_back(std::stod(cell));
                }
            }
            return t;
        }

        std::string svg_chart(const std::string &title, const std::string &y_label, const std::vector<double> &x,
                              const std::vector<std::pair<std::string, std::vector<double>>> &lines)
        {
            const double w = 800;
            const double h = 400;
            const double ml = 80;
            const double mr = 150;
            const double mt = 40;
            const double mb = 50;
            double x0 = x.empty() ? 0.0 : x.front();
            double x1 = x.empty() ? 1.0 : x.back();
            double y0 = 1e300;
            double y1 = -1e300;
            for (const auto &[name, ys] : lines)
            {
                for (const double v : ys)
                {
                    if (std::isfinite(v))
                    {
                        y0 = std::min(y0, v);
                        y1 = std::max(y1, v);
                    }
                }
            }
            if (y0 > y1)
            {
                y0 = 0.0;
                y1 = 1.0;
            }
            if (y1 - y0 < 1e-9)
            {
                y0 -= 0.5e-3 + std::abs(y0) * 1e-4;
                y1 += 0.5e-3 + std::abs(y1) * 1e-4;
            }
            if (x1 <= x0)
            {
                x1 = x0 + 1.0;
            }
            const auto px = [&](double v) { return ml + (v - x0) / (x1 - x0) * (w - ml - mr); };
            const auto py = [&](double v) { return h - mb - (v - y0) / (y1 - y0) * (h - mt - mb); };
            static const char *colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

            std::string s = fmt::format(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
                "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
                w, h);
            s += fmt::format("<text x=\"{}\" y=\"24\" font-size=\"15\">{}</text>\n", ml, title);
            s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n", ml,
                             mt, w - ml - mr, h - mt - mb);
            for (int k = 0; k <= 4; ++k)
            {
                const double yv = y0 + (y1 - y0) * k / 4.0;
                const double xv = x0 + (x1 - x0) * k / 4.0;
                s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.6g}</text>\n", ml - 6, py(yv) + 4, yv);
                s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.4g}</text>\n", px(xv), h - mb + 18,
                                 xv);
            }
            s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">time (s)</text>\n", (ml + w - mr) / 2,
                             h - 10);
            s += fmt::format("<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}</text>\n",
                             h / 2, h / 2, y_label);
            for (std::size_t l = 0; l < lines.size(); ++l)
            {
                const auto &[name, ys] = lines[l];
                const char *color = colors[l % 6];
                std::string pts;
                for (std::size_t k = 0; k < std::min(x.size(), ys.size()); ++k)
                {
                    if (std::isfinite(ys[k]))
                    {
                        pts += fmt::format("{:.2f},{:.2f} ", px(x[k]), py(ys[k]));
                    }
                }
                s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", color,
                                 pts);
                s += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", w - mr + 8, mt + 16 * (l + 1),
                                 color, name);
            }
            s += "</svg>\n";
            return s;
        }
    } // namespace

    std::vector<fs::path> render_plots(const fs::path &dir)
    {
        std::vector<fs::path> written;
        const auto emit = [&](const std::string &name, const std::string &svg) {
            write_file(dir / name, svg);
            written.push_back(dir / name);
        };
        if (fs::exists(dir / "frequency.csv"))
        {
            const auto t = read_csv(dir / "frequency.csv");
            emit("frequency.svg", svg_chart("System frequency", "Hz", t.columns[0], {{"frequency", t.columns[1]}}));
        }
        if (fs::exists(dir / "ace.csv"))
        {
            const auto t = read_csv(dir / "ace.csv");
            emit("ace.svg", svg_chart("Area control error", "MW", t.columns[0],
                                      {{"ACE", t.columns[1]}, {"AGC signal", t.columns[2]}}));
        }
        std::vector<fs::path> files;
        for (const auto &e : fs::directory_iterator(dir))
        {
            files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto &p : files)
        {
            const auto stem = p.stem().string();
            if (p.extension() != ".csv")
            {
                continue;
            }
            if (stem.rfind("der_", 0) == 0)
            {
                const auto t = read_csv(p);
                emit(stem + ".svg", svg_chart("DER " + stem.substr(4), "MW", t.columns[0],
                                              {{"p_out", t.columns[1]},
                                               {"p_mppt", t.columns[4]},
                                               {"p_cmd", t.columns[5]},
                                               {"vsm limit", t.columns[6]}}));
            }
            else if (stem.rfind("feeder_", 0) == 0)
            {
                const auto t = read_csv(p);
                emit(stem + ".svg", svg_chart("Feeder voltage " + stem.substr(7), "pu", t.columns[0],
                                              {{"mean", t.columns[1]}, {"min", t.columns[3]}, {"max", t.columns[4]}}));
            }
        }
        return written;
    }
} // namespace tdcosim::scenario
