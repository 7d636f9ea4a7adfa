#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tdcosim::transmission
{
    using Complex = std::complex<double>;

    class GridError : public std::runtime_error
    {
    public:
        enum class Code
        {
            InvalidData,
            Islanded,
            NonConvergence,
            UnknownElement,
            LastSourceTrip,
            NotBoundary,
        };

        GridError(Code code, const std::string &what) : std::runtime_error(what), code_(code) {}
        Code code() const noexcept { return code_; }

    private:
        Code code_;
    };

    enum class BusType
    {
        PQ,
        PV,
        Slack
    };

    enum class LoadModel
    {
        ConstantImpedance,
        ConstantPower
    };

    /// All powers are per unit on the system base unless the name says otherwise.
    struct Bus
    {
        int id = 0;
        BusType type = BusType::PQ;
        double v_set = 1.0;
        double load_p = 0.0;
        double load_q = 0.0;
        double shunt_g = 0.0;
        double shunt_b = 0.0;
        LoadModel load_model = LoadModel::ConstantImpedance;
        // Constant-power load supplied by a distribution federate (gross, before DER).
        double boundary_p = 0.0;
        double boundary_q = 0.0;
        // DER active power injected at this bus.
        double der_p = 0.0;
    };

    /// Pi-branch; an off-nominal tap sits on the from side.
    struct Branch
    {
        int from = 0;
        int to = 0;
        double r = 0.0;
        double x = 0.0;
        double b = 0.0;
        double tap = 1.0;
        bool in_service = true;
    };

    /// First-order turbine-governor with droop and output limits.
    struct Governor
    {
        double droop = 0.05;     // R, pu speed per pu power (system base)
        double time_constant = 0.5; // Tg, s
        double pmax = 1.0;
        double pmin = 0.0;
        double pref = 0.0;       // set at initialization
        bool enabled = true;
    };

    /// Classical machine: constant EMF behind transient reactance, second-order swing.
    struct SyncGenerator
    {
        std::string id;
        int bus = 0;
        double p_set = 0.0;      // dispatch used by the power flow (PV buses)
        double inertia = 5.0;    // H, s on system base
        double damping = 0.0;    // D, pu
        double xd_prime = 0.25;  // pu
        Governor governor;
        double agc_participation = 0.0;
        bool online = true;
    };

    struct Grid
    {
        double base_mva = 100.0;
        double base_hz = 60.0;
        std::vector<Bus> buses;
        std::vector<Branch> branches;
        std::vector<SyncGenerator> generators;

        std::size_t bus_index(int id) const;
        std::optional<std::size_t> find_bus(int id) const;
        std::size_t generator_index(std::string_view id) const;
        std::size_t online_generator_count() const;

        /// Structural checks: unique ids, branch endpoints exist, one slack, positive parameters.
        void validate() const;
    };

    /// Reads the YAML grid description (see docs/file_formats.md).
    Grid load_grid(const std::filesystem::path &path);
} // namespace tdcosim::transmission
