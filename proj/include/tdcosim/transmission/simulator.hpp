#pragma once

#include "tdcosim/der/der.hpp"
#include "tdcosim/transmission/dae.hpp"
#include "tdcosim/transmission/grid.hpp"
#include "tdcosim/transmission/power_flow.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tdcosim::transmission
{
    struct TransmissionOptions
    {
        double dt = 1.0 / 30.0; // two cycles
        // Measure frequency from the angle derivative of this bus instead of the COI.
        std::optional<int> frequency_bus;
        IntegratorOptions integrator;
        PowerFlowOptions power_flow;
    };

    enum class EventKind
    {
        GeneratorTrip,
        SetpointChange,
        LoadScale
    };

    struct Event
    {
        EventKind kind = EventKind::GeneratorTrip;
        double time = 0.0;
        std::string generator; // trip, setpoint change
        int bus = 0;           // load scale
        double value = 0.0;    // MW for setpoint change, factor for load scale
    };

    struct AppliedEvent
    {
        double time = 0.0;
        std::string description;
    };

    /// A DER whose active-power dynamics run inside the transmission step loop.
    struct DerUnit
    {
        der::DerState state;
        der::MpptSeries mppt;
        int bus = 0;
        double p_cmd = 0.0;      // command used for the last step
        double p_out_prev = 0.0; // output before the last step
    };

    class NetworkDae;

    /// Center-of-inertia frequency base_hz * sum(H w) / sum(H).
    double coi_frequency(const std::vector<double> &inertia, const std::vector<double> &speed, double base_hz = 60.0);

    /// Positive-sequence transmission network with classical machines, governors and
    /// DER injections, integrated as one mass-matrix DAE.
    class TransmissionSystem
    {
    public:
        explicit TransmissionSystem(Grid grid, TransmissionOptions options = {});
        ~TransmissionSystem();
        TransmissionSystem(TransmissionSystem &&) noexcept;
        TransmissionSystem &operator=(TransmissionSystem &&) noexcept;

        // Configuration, before initialize().
        void add_boundary(int bus);
        std::size_t add_der(der::DerState state, der::MpptSeries mppt, int bus);
        void schedule(Event event);

        /// Power flow, constant-impedance load conversion, machine back-initialization.
        /// Resets time to zero. May be called again after boundary loads change.
        PowerFlowResult initialize();
        bool initialized() const noexcept { return initialized_; }

        void step();
        void advance_to(double t);
        /// Re-solves the network for the current inputs without advancing time.
        void resolve_algebraic();

        // Inputs.
        bool is_boundary(int bus) const;
        void set_boundary_load(int bus, Complex s_mva);
        Complex boundary_load(int bus) const; // MVA
        void set_load_multiplier(int bus, double multiplier);
        void set_agc_setpoint(std::string_view generator, double mw);
        void set_der_setpoint(std::string_view der_id, double p_ext_mw, double p_headroom_mw);
        void apply_event(const Event &event);

        // Outputs.
        double time() const noexcept { return state_.t; }
        long step_count() const noexcept { return steps_; }
        double dt() const noexcept { return options_.dt; }
        Complex get_boundary_voltage(int bus) const; // pu phasor
        Complex bus_voltage(int bus) const;
        double measure_frequency() const;
        double coi_frequency() const;
        double algebraic_residual() const;

        /// Generation + DER - load - branch losses at the current point, pu.
        double power_balance_residual() const;
        double total_accelerating_power() const; // sum of Pm - Pe, pu
        double kinetic_deviation() const;        // sum of 2H (w - 1)

        double speed(std::string_view generator) const;
        double rotor_angle(std::string_view generator) const;
        double mechanical_power(std::string_view generator) const; // pu
        double electrical_power(std::string_view generator) const; // pu
        double agc_setpoint(std::string_view generator) const;     // MW

        const Grid &grid() const noexcept { return grid_; }
        const DaeState &state() const noexcept { return state_; }
        const std::vector<DerUnit> &ders() const noexcept { return ders_; }
        const DerUnit &der(std::string_view id) const;
        const std::vector<AppliedEvent> &applied_events() const noexcept { return applied_; }
        std::vector<int> native_load_buses() const;
        const TransmissionOptions &options() const noexcept { return options_; }

        /// Called after every accepted internal step.
        void set_step_observer(std::function<void(const TransmissionSystem &)> observer)
        {
            observer_ = std::move(observer);
        }

    private:
        std::size_t der_index(std::string_view id) const;
        std::size_t online_slot(std::string_view generator) const;
        void update_ders();
        void refresh_inputs();
        void apply_due_events();
        void require_initialized() const;

        Grid grid_;
        Grid base_grid_;
        TransmissionOptions options_;
        TrapezoidalIntegrator integrator_;
        std::unique_ptr<NetworkDae> model_;
        DaeState state_;
        long steps_ = 0;
        bool initialized_ = false;
        bool inputs_dirty_ = false;

        Eigen::MatrixXcd network_ybus_;
        std::vector<Complex> nominal_admittance_; // native constant-impedance loads at unit multiplier
        std::vector<bool> boundary_;
        std::vector<double> load_scale_;      // from events
        std::vector<double> load_multiplier_; // from noise
        std::vector<double> agc_pext_;        // per generator, pu
        std::vector<DerUnit> ders_;
        std::vector<Event> events_;
        std::size_t next_event_ = 0;
        std::vector<AppliedEvent> applied_;
        double prev_freq_angle_ = 0.0;
        double freq_bus_hz_ = 60.0;
        std::function<void(const TransmissionSystem &)> observer_;
    };
} // namespace tdcosim::transmission
