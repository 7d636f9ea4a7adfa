#include "tdcosim/scenario/scenario.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <exception>

namespace ts = tdcosim::scenario;

int main(int argc, char **argv)
{
    auto logger = spdlog::stderr_color_mt("tdcosim");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    // TDCOSIM_LOG_LEVEL=debug|info|warn|error|off
    if (const char *lvl = std::getenv("TDCOSIM_LOG_LEVEL"))
    {
        spdlog::set_level(spdlog::level::from_str(lvl));
    }

    CLI::App app{"Transmission and distribution frequency co-simulation"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    double stop_time = 0.0;
    bool no_agc = false;
    bool no_plots = false;
    auto *run = app.add_subcommand("run", "Run a scenario and write its results");
    run->add_option("scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
    auto *out_opt = run->add_option("--out", out_dir, "Output directory (default: scenario output_dir or results/<name>)");
    auto *seed_opt = run->add_option("--seed", seed, "Seed for load noise and message drops");
    auto *stop_opt = run->add_option("--stop-time", stop_time, "Stop time, s");
    run->add_flag("--no-agc", no_agc, "Disable secondary control");
    run->add_flag("--no-plots", no_plots, "Skip SVG rendering");

    std::string validate_path;
    auto *validate = app.add_subcommand("validate", "Parse and check a scenario without running it");
    validate->add_option("scenario", validate_path, "Scenario file")->required();

    std::string plot_dir;
    auto *plot = app.add_subcommand("plot", "Render SVG charts from a results directory");
    plot->add_option("dir", plot_dir, "Results directory")->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*run)
        {
            auto s = ts::load_scenario(scenario_path);
            ts::Overrides o;
            if (*seed_opt)
            {
                o.seed = seed;
            }
            if (*stop_opt)
            {
                o.stop_time = stop_time;
            }
            o.no_agc = no_agc;
            if (*out_opt)
            {
                o.output_dir = out_dir;
            }
            ts::apply_overrides(s, o);
            const auto dir = s.output_dir.empty() ? std::filesystem::path("results") / s.name : s.output_dir;
            const auto r = ts::run(s);
            ts::emit_outputs(r, dir);
            if (!no_plots)
            {
                ts::render_plots(dir);
            }
            fmt::print("{}", ts::summary_table(r));
            fmt::print("wall clock {:.2f} s, results in {}\n", r.wall_seconds, dir.string());
        }
        else if (*validate)
        {
            const auto s = ts::load_scenario(validate_path);
            fmt::print("{}: ok ({} buses, {} generators, {} feeders, {} events, stop {} s)\n", s.name,
                       s.grid.buses.size(), s.grid.generators.size(), s.feeders.size(), s.events.size(), s.stop_time);
        }
        else if (*plot)
        {
            for (const auto &p : ts::render_plots(plot_dir))
            {
                fmt::print("{}\n", p.string());
            }
        }
    }
    catch (const std::exception &e)
    {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
