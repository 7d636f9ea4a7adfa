#pragma once

#include "tdcosim/agc/agc.hpp"
#include "tdcosim/cosim/federation.hpp"
#include "tdcosim/distribution/feeder.hpp"
#include "tdcosim/transmission/grid.hpp"
#include "tdcosim/transmission/simulator.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tdcosim::scenario
{
    struct Cadences
    {
        double td_exchange = 1.0;          // boundary power / voltage, s
        double meas_out = 0.5;             // frequency measurement, s
        double agc_period = 4.0;           // AGC signal, s
        double internal_dt = 1.0 / 30.0;   // transmission step, s
        double vsm_refresh = 10.0;         // headroom rebuild, s
    };

    struct FeederBinding
    {
        std::string name;
        std::filesystem::path file;
        int bus = 0;
        std::optional<double> tap; // overrides the feeder file
    };

    struct DerDefaults
    {
        double tg = 0.1;
        double d_dn = 20.0;
        double db_uf = 0.017;
        double db_of = 0.017;
        double mppt_mw = 0.8; // used when a DER names neither mppt_mw nor mppt_file
    };

    struct AgcConfig
    {
        bool enabled = true;
        agc::AgcAreaState area;
        agc::ParticipationTable participation;
    };

    struct HeadroomConfig
    {
        bool enabled = true;
        double delta_mw = 0.01;
        double v_lo = 0.95;
        double v_hi = 1.05;
        bool current_limits = true;
        bool monitor_all = true;
    };

    struct NoiseConfig
    {
        double std = 0.0; // fraction of nominal load
        std::uint64_t seed = 0;
    };

    struct Scenario
    {
        std::string name;
        std::filesystem::path source;
        std::filesystem::path grid_file;
        transmission::Grid grid;
        std::vector<FeederBinding> feeders;
        std::vector<distribution::FeederNetwork> networks; // parallel to feeders
        Cadences cadences;
        DerDefaults der_defaults;
        AgcConfig agc;
        HeadroomConfig headroom;
        std::vector<transmission::Event> events;
        NoiseConfig noise;
        double stop_time = 60.0;
        double log_dt = 0.1;
        std::optional<int> frequency_bus;
        cosim::FederationConfig federation;
        cosim::Execution execution = cosim::Execution::Sequential;
        std::filesystem::path output_dir;
    };

    /// Parses and validates a scenario file. Paths inside are relative to the file.
    Scenario load_scenario(const std::filesystem::path &path);

    /// Structural checks shared by the loader and programmatic construction.
    void validate(const Scenario &s);

    struct Overrides
    {
        std::optional<std::uint64_t> seed;
        std::optional<double> stop_time;
        bool no_agc = false;
        std::optional<std::filesystem::path> output_dir;
    };

    void apply_overrides(Scenario &s, const Overrides &o);

    /// Independent seed for stream `stream` derived from `seed`.
    std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

    /// Gaussian multipliers with mean 1 and the given std, one per hold interval.
    std::vector<double> generate_load_series(std::uint64_t seed, double std, std::size_t n_steps);

    struct SeriesStats
    {
        double mean = 0.0;
        double std = 0.0; // population
        double min = 0.0;
        double max = 0.0;
        std::size_t count = 0;
    };

    SeriesStats series_stats(std::span<const double> values);

    struct DerSample
    {
        double t = 0.0;
        double p_out = 0.0;
        double p_drp = 0.0;
        double p_ext = 0.0;
        double p_mppt = 0.0;
        double p_cmd = 0.0;
        double vsm_limit = 0.0; // p_ref + p_headroom
    };

    struct DerTrace
    {
        std::string id;
        std::string feeder;
        std::vector<DerSample> samples;
    };

    struct VoltageSample
    {
        double t = 0.0;
        distribution::VoltageStats stats;
    };

    struct SubstationSample
    {
        double t = 0.0;
        double load_multiplier = 1.0;
        distribution::Complex v_pu;
        distribution::Complex s_net_mva;
        distribution::Complex s_gross_mva;
    };

    struct FeederTrace
    {
        std::string name;
        int bus = 0;
        std::vector<VoltageSample> voltage;
        std::vector<SubstationSample> substation;
        int max_sweeps = 0;
        double max_residual = 0.0;
    };

    struct LoggedEvent
    {
        double t = 0.0;
        std::string kind; // event, agc_signal, headroom_refresh
        std::string detail;
    };

    /// Per-step check of the DER output against its active limits.
    struct LimitCheck
    {
        std::size_t steps_checked = 0;
        std::size_t violations = 0;
        double worst_excess = 0.0; // MW beyond the allowance
        std::string worst_der;
        double worst_time = 0.0;
    };

    struct RunResults
    {
        std::string scenario;
        std::vector<double> t;       // log grid
        std::vector<double> freq_hz; // on t
        std::vector<double> t_ace;   // measurement grid
        std::vector<double> ace_mw;
        std::vector<double> agc_signal_mw;
        std::vector<DerTrace> ders;
        std::vector<FeederTrace> feeders;
        std::vector<LoggedEvent> events;
        cosim::FederationLog federation_log;
        LimitCheck limits;
        double internal_dt = 0.0;
        long internal_steps = 0;
        SeriesStats freq_stats;
        SeriesStats ace_stats;
        double wall_seconds = 0.0;
    };

    RunResults run(const Scenario &scenario);

    /// Writes the CSV series, summary and plot-data files. Wall-clock time goes to run_time.txt only.
    void emit_outputs(const RunResults &results, const std::filesystem::path &dir);

    std::string summary_table(const RunResults &results);

    /// Renders SVG charts from an output directory written by emit_outputs.
    std::vector<std::filesystem::path> render_plots(const std::filesystem::path &dir);
} // namespace tdcosim::scenario
