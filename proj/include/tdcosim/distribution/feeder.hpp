#pragma once

#include <Eigen/Dense>

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tdcosim::distribution
{
    using Complex = std::complex<double>;
    using PhaseArray = std::array<Complex, 3>;

    class DistributionError : public std::runtime_error
    {
    public:
        enum class Code
        {
            InvalidFeeder,
            NonConvergence,
            UnknownElement,
        };

        DistributionError(Code code, const std::string &what) : std::runtime_error(what), code_(code) {}
        Code code() const noexcept { return code_; }

    private:
        Code code_;
    };

    /// Phase bit set: a = 1, b = 2, c = 4.
    using PhaseMask = std::uint8_t;
    inline constexpr PhaseMask kPhaseA = 1;
    inline constexpr PhaseMask kPhaseB = 2;
    inline constexpr PhaseMask kPhaseC = 4;
    inline constexpr PhaseMask kPhaseABC = 7;

    inline bool has_phase(PhaseMask m, int ph) { return (m >> ph) & 1U; }
    int phase_count(PhaseMask m);
    PhaseMask parse_phases(std::string_view text); // "abc", "a", "bc", ...
    std::string phase_string(PhaseMask m);

    struct FeederNode
    {
        std::string id;
        PhaseMask phases = kPhaseABC;
    };

    struct FeederBranch
    {
        std::size_t from = 0;
        std::size_t to = 0;
        PhaseMask phases = kPhaseABC;
        Eigen::Matrix3cd z = Eigen::Matrix3cd::Zero(); // ohm
        double ampacity = 0.0;                         // A per phase, 0 = unrated
    };

    /// Constant-power load, per phase, kW / kvar.
    struct FeederLoad
    {
        std::size_t node = 0;
        PhaseArray s_kva{};
    };

    /// DER binding as declared in the feeder file. Unset fields fall back to scenario defaults.
    struct FeederDer
    {
        std::string id;
        std::size_t node = 0;
        PhaseMask phases = kPhaseABC;
        double p_caps_mw = 0.0;
        double p_ref_mw = 0.0;
        std::optional<double> tg;
        std::optional<double> d_dn;
        std::optional<double> db_uf;
        std::optional<double> db_of;
        std::optional<double> mppt_mw;
        std::optional<std::filesystem::path> mppt_file;
    };

    struct FeederNetwork
    {
        std::string name;
        double base_kv = 12.47;    // line-to-line
        double base_kva = 10000.0; // three-phase
        std::size_t substation = 0;
        double source_tap = 1.0;
        std::vector<FeederNode> nodes;
        std::vector<FeederBranch> branches;
        std::vector<FeederLoad> loads;
        std::vector<FeederDer> ders;

        double v_base() const; // line-to-neutral volts
        double s_phase_base() const { return base_kva * 1000.0 / 3.0; } // VA per phase

        std::size_t node_index(std::string_view id) const;
        std::size_t der_index(std::string_view id) const;
        bool radial() const;

        /// Connectivity, phase consistency and reference checks. Builds the traversal order.
        void finalize();

        // Filled by finalize().
        std::vector<std::size_t> order;              // breadth-first from the substation
        std::vector<std::ptrdiff_t> parent_branch;   // -1 for the substation
        std::vector<PhaseArray> node_load_kva;       // aggregated per node
        double total_load_kw() const;
    };

    FeederNetwork load_feeder(const std::filesystem::path &path);

    struct SolveOptions
    {
        double tolerance = 1e-8; // pu voltage change
        int max_iterations = 100;
        bool force_ybus = false;
        // Constant-impedance share of every load, 0 = constant power.
        double impedance_fraction = 0.0;
    };

    struct FeederSolution
    {
        std::vector<PhaseArray> v;  // per node, volts line-to-neutral (0 for absent phases)
        std::vector<PhaseArray> i;  // per branch, amperes from -> to
        PhaseArray s_abc{};         // substation net load, MVA per phase (load positive)
        PhaseArray s_gross{};       // s_abc plus the DER outputs
        int iterations = 0;
        double residual = 0.0;      // last max |dV|, pu
        bool used_ybus = false;
        double v_base = 1.0;

        double v_pu(std::size_t node, int phase) const { return std::abs(v[node][static_cast<std::size_t>(phase)]) / v_base; }
    };

    /// Three-phase balanced source from a positive-sequence phasor, pu.
    PhaseArray balanced_source(Complex v_pos_pu);

    /// Backward-forward sweep on radial feeders, Ybus fixed point otherwise.
    /// der_p_mw holds one entry per feeder DER (unity power factor, split evenly over its phases).
    FeederSolution solve_feeder(const FeederNetwork &feeder, Complex v_sub_pu, std::span<const double> der_p_mw,
                                double load_multiplier = 1.0, const SolveOptions &options = {},
                                const FeederSolution *warm_start = nullptr);

    /// Mean of the phase powers.
    Complex aggregate_positive_sequence(const PhaseArray &s_abc);

    /// Positive-sequence power in MVA as sent to transmission: the phase mean on the per-phase
    /// base, which equals the phase sum in MVA.
    Complex positive_sequence_mva(const PhaseArray &s_abc_mva);

    struct Violation
    {
        enum class Kind
        {
            UnderVoltage,
            OverVoltage,
            Thermal
        };
        Kind kind = Kind::UnderVoltage;
        std::string location; // node id or "from->to"
        int phase = 0;
        double value = 0.0;   // pu or A
        double limit = 0.0;
    };

    std::vector<Violation> check_limits(const FeederNetwork &feeder, const FeederSolution &sol, double v_min = 0.95,
                                        double v_max = 1.05);

    struct VoltageStats
    {
        double mean = 0.0;
        double std = 0.0;
        double min = 0.0;
        double max = 0.0;
        std::size_t count = 0;
    };

    /// Statistics over every present node-phase magnitude, pu.
    VoltageStats voltage_stats(const FeederNetwork &feeder, const FeederSolution &sol);
} // namespace tdcosim::distribution
