#include "tdcosim/transmission/simulator.hpp"

#include "network.hpp"
#include "network_dae.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tdcosim::transmission
{
    namespace
    {
        constexpr double kEventTolerance = 1e-9;
    }

    double coi_frequency(const std::vector<double> &inertia, const std::vector<double> &speed, double base_hz)
    {
        double hw = 0.0;
        double h = 0.0;
        for (std::size_t i = 0; i < inertia.size(); ++i)
        {
            hw += inertia[i] * speed[i];
            h += inertia[i];
        }
        return h > 0.0 ? base_hz * hw / h : base_hz;
    }

    TransmissionSystem::TransmissionSystem(Grid grid, TransmissionOptions options)
        : grid_(std::move(grid)), options_(options), integrator_(options.integrator),
          model_(std::make_unique<NetworkDae>())
    {
        grid_.validate();
        if (!(options_.dt > 0.0))
        {
            throw GridError(GridError::Code::InvalidData, "internal time step must be positive");
        }
        if (options_.frequency_bus && !grid_.find_bus(*options_.frequency_bus))
        {
            throw GridError(GridError::Code::UnknownElement,
                            fmt::format("frequency bus {} does not exist", *options_.frequency_bus));
        }
        base_grid_ = grid_;
        const std::size_t nb = grid_.buses.size();
        boundary_.assign(nb, false);
        load_scale_.assign(nb, 1.0);
        load_multiplier_.assign(nb, 1.0);
        agc_pext_.assign(grid_.generators.size(), 0.0);
        freq_bus_hz_ = grid_.base_hz;
    }

    TransmissionSystem::~TransmissionSystem() = default;
    TransmissionSystem::TransmissionSystem(TransmissionSystem &&) noexcept = default;
    TransmissionSystem &TransmissionSystem::operator=(TransmissionSystem &&) noexcept = default;

    void TransmissionSystem::add_boundary(int bus)
    {
        boundary_[grid_.bus_index(bus)] = true;
    }

    bool TransmissionSystem::is_boundary(int bus) const
    {
        const auto idx = grid_.find_bus(bus);
        return idx && boundary_[*idx];
    }

    std::size_t TransmissionSystem::add_der(der::DerState state, der::MpptSeries mppt, int bus)
    {
        if (initialized_)
        {
            throw GridError(GridError::Code::InvalidData, "DERs must be added before initialization");
        }
        grid_.bus_index(bus);
        if (!(state.tg > 0.0))
        {
            throw der::DerError(fmt::format("DER '{}': tracking time constant must be > 0", state.id));
        }
        if (mppt.empty())
        {
            throw der::DerError(fmt::format("DER '{}' has no MPPT series", state.id));
        }
        for (const auto &d : ders_)
        {
            if (d.state.id == state.id)
            {
                throw GridError(GridError::Code::InvalidData, fmt::format("duplicate DER id '{}'", state.id));
            }
        }
        DerUnit unit;
        unit.state = std::move(state);
        unit.mppt = std::move(mppt);
        unit.bus = bus;
        ders_.push_back(std::move(unit));
        return ders_.size() - 1;
    }

    void TransmissionSystem::schedule(Event event)
    {
        switch (event.kind)
        {
        case EventKind::GeneratorTrip:
        case EventKind::SetpointChange:
            grid_.generator_index(event.generator);
            break;
        case EventKind::LoadScale:
            if (!grid_.find_bus(event.bus))
            {
                throw GridError(GridError::Code::UnknownElement, fmt::format("unknown bus {}", event.bus));
            }
            if (!(event.value >= 0.0))
            {
                throw GridError(GridError::Code::InvalidData, "load scale factor must be >= 0");
            }
            break;
        }
        const auto pos = std::upper_bound(events_.begin(), events_.end(), event.time,
                                          [](double t, const Event &e) { return t < e.time; });
        events_.insert(pos, std::move(event));
    }

    PowerFlowResult TransmissionSystem::initialize()
    {
        const double base = grid_.base_mva;
        const std::size_t nb = grid_.buses.size();

        // Restore generator status and setpoints from the base case.
        grid_.generators = base_grid_.generators;
        for (std::size_t k = 0; k < nb; ++k)
        {
            const double m = load_scale_[k] * load_multiplier_[k];
            grid_.buses[k].load_p = base_grid_.buses[k].load_p * m;
            grid_.buses[k].load_q = base_grid_.buses[k].load_q * m;
            grid_.buses[k].der_p = 0.0;
        }
        for (auto &unit : ders_)
        {
            auto &d = unit.state;
            d.p_drp = 0.0;
            d.p_mppt = unit.mppt.sample(0.0);
            unit.p_cmd = der::command_limit(d);
            d.p_out = unit.p_cmd;
            unit.p_out_prev = d.p_out;
            grid_.buses[grid_.bus_index(unit.bus)].der_p += d.p_out / base;
        }

        PowerFlowResult pf = solve_power_flow(grid_, options_.power_flow);

        auto &m = *model_;
        m.ws = 2.0 * std::numbers::pi * grid_.base_hz;
        m.gens.clear();

        // Split each bus's generation among its online machines.
        std::vector<double> bus_pset(nb, 0.0);
        std::vector<int> bus_count(nb, 0);
        for (const auto &g : grid_.generators)
        {
            if (g.online)
            {
                const auto k = grid_.bus_index(g.bus);
                bus_pset[k] += g.p_set;
                bus_count[k] += 1;
            }
        }
        Eigen::VectorXd x(static_cast<Eigen::Index>(3 * grid_.online_generator_count()));
        for (std::size_t gi = 0; gi < grid_.generators.size(); ++gi)
        {
            auto &g = grid_.generators[gi];
            if (!g.online)
            {
                continue;
            }
            const auto k = grid_.bus_index(g.bus);
            const auto kk = static_cast<Eigen::Index>(k);
            const double share = bus_pset[k] > 0.0 ? g.p_set / bus_pset[k] : 1.0 / bus_count[k];
            const Complex s(pf.p_gen[kk] * share, pf.q_gen[kk] / bus_count[k]);
            const Complex v = pf.voltage(k);
            const Complex i = std::conj(s / v);
            const Complex e = v + Complex(0.0, g.xd_prime) * i;

            GenSlot slot;
            slot.generator = gi;
            slot.bus = kk;
            slot.e = std::abs(e);
            slot.xd = g.xd_prime;
            slot.h = g.inertia;
            slot.d = g.damping;
            slot.r = g.governor.droop;
            slot.tg = g.governor.time_constant;
            slot.pmin = g.governor.pmin;
            slot.pmax = g.governor.pmax;
            slot.governor = g.governor.enabled;
            slot.pext = agc_pext_[gi] = 0.0;
            const double pm = s.real();
            if (pm < slot.pmin - 1e-9 || pm > slot.pmax + 1e-9)
            {
                throw GridError(GridError::Code::InvalidData,
                                fmt::format("generator '{}' initial output {:.2f} MW is outside [{:.2f}, {:.2f}] MW",
                                            g.id, pm * base, slot.pmin * base, slot.pmax * base));
            }
            g.governor.pref = pm;
            slot.pref = pm;
            const auto s3 = static_cast<Eigen::Index>(3 * m.gens.size());
            x[s3] = std::arg(e);
            x[s3 + 1] = 1.0;
            x[s3 + 2] = pm;
            m.gens.push_back(slot);
        }

        state_.x = x;
        state_.y.resize(static_cast<Eigen::Index>(2 * nb));
        state_.y.head(static_cast<Eigen::Index>(nb)) = pf.va;
        state_.y.tail(static_cast<Eigen::Index>(nb)) = pf.vm;
        state_.t = 0.0;

        // Native loads become admittances at their solved voltage; boundary loads stay constant power.
        nominal_admittance_.assign(nb, Complex(0.0, 0.0));
        for (std::size_t k = 0; k < nb; ++k)
        {
            const auto &b = base_grid_.buses[k];
            if (b.load_model == LoadModel::ConstantImpedance)
            {
                const double v0 = pf.vm[static_cast<Eigen::Index>(k)];
                nominal_admittance_[k] = Complex(b.load_p, -b.load_q) / (v0 * v0);
            }
        }
        network_ybus_ = detail::build_ybus(grid_);
        steps_ = 0;
        next_event_ = 0;
        applied_.clear();
        initialized_ = true;
        refresh_inputs();
        integrator_.solve_algebraic(*model_, state_);
        inputs_dirty_ = false;
        if (options_.frequency_bus)
        {
            prev_freq_angle_ = state_.y[static_cast<Eigen::Index>(grid_.bus_index(*options_.frequency_bus))];
        }
        freq_bus_hz_ = grid_.base_hz;
        return pf;
    }

    void TransmissionSystem::refresh_inputs()
    {
        auto &m = *model_;
        const std::size_t nb = grid_.buses.size();
        const auto nbi = static_cast<Eigen::Index>(nb);
        Eigen::MatrixXcd y = network_ybus_;
        m.pl = Eigen::VectorXd::Zero(nbi);
        m.ql = Eigen::VectorXd::Zero(nbi);
        m.pder = Eigen::VectorXd::Zero(nbi);
        for (std::size_t k = 0; k < nb; ++k)
        {
            const auto kk = static_cast<Eigen::Index>(k);
            const auto &b = base_grid_.buses[k];
            const double mult = load_scale_[k] * load_multiplier_[k];
            if (b.load_model == LoadModel::ConstantImpedance)
            {
                y(kk, kk) += nominal_admittance_[k] * mult;
            }
            else
            {
                m.pl[kk] += b.load_p * mult;
                m.ql[kk] += b.load_q * mult;
            }
            m.pl[kk] += grid_.buses[k].boundary_p;
            m.ql[kk] += grid_.buses[k].boundary_q;
            grid_.buses[k].load_p = b.load_p * mult;
            grid_.buses[k].load_q = b.load_q * mult;
        }
        for (const auto &unit : ders_)
        {
            m.pder[static_cast<Eigen::Index>(grid_.bus_index(unit.bus))] += unit.state.p_out / grid_.base_mva;
        }
        for (std::size_t k = 0; k < nb; ++k)
        {
            grid_.buses[k].der_p = m.pder[static_cast<Eigen::Index>(k)];
        }
        m.G = y.real();
        m.B = y.imag();
        inputs_dirty_ = true;
    }

    void TransmissionSystem::require_initialized() const
    {
        if (!initialized_)
        {
            throw GridError(GridError::Code::InvalidData, "transmission system is not initialized");
        }
    }

    void TransmissionSystem::apply_due_events()
    {
        while (next_event_ < events_.size() && events_[next_event_].time <= state_.t + kEventTolerance)
        {
            apply_event(events_[next_event_]);
            ++next_event_;
        }
    }

    void TransmissionSystem::apply_event(const Event &event)
    {
        require_initialized();
        switch (event.kind)
        {
        case EventKind::GeneratorTrip: {
            const auto gi = grid_.generator_index(event.generator);
            auto &gen = grid_.generators[gi];
            if (!gen.online)
            {
                throw GridError(GridError::Code::InvalidData,
                                fmt::format("generator '{}' is already tripped", event.generator));
            }
            if (grid_.online_generator_count() <= 1)
            {
                throw GridError(GridError::Code::LastSourceTrip,
                                fmt::format("tripping '{}' would remove the last online generator", event.generator));
            }
            auto &m = *model_;
            Eigen::VectorXd x(state_.x.size() - 3);
            std::vector<GenSlot> kept;
            for (std::size_t i = 0; i < m.gens.size(); ++i)
            {
                if (m.gens[i].generator == gi)
                {
                    continue;
                }
                const auto dst = static_cast<Eigen::Index>(3 * kept.size());
                x.segment(dst, 3) = state_.x.segment(static_cast<Eigen::Index>(3 * i), 3);
                kept.push_back(m.gens[i]);
            }
            gen.online = false;
            m.gens = std::move(kept);
            state_.x = std::move(x);
            inputs_dirty_ = true;
            applied_.push_back({state_.t, fmt::format("generator_trip {}", event.generator)});
            break;
        }
        case EventKind::SetpointChange: {
            const auto gi = grid_.generator_index(event.generator);
            auto &gen = grid_.generators[gi];
            gen.governor.pref += event.value / grid_.base_mva;
            for (auto &slot : model_->gens)
            {
                if (slot.generator == gi)
                {
                    slot.pref = gen.governor.pref;
                }
            }
            applied_.push_back({state_.t, fmt::format("setpoint_change {} {:+.6g} MW", event.generator, event.value)});
            break;
        }
        case EventKind::LoadScale: {
            const auto k = grid_.bus_index(event.bus);
            load_scale_[k] = event.value;
            refresh_inputs();
            applied_.push_back({state_.t, fmt::format("load_scale bus {} x{:.6g}", event.bus, event.value)});
            break;
        }
        }
    }

    void TransmissionSystem::update_ders()
    {
        if (ders_.empty())
        {
            return;
        }
        const double f = measure_frequency();
        const double t = state_.t;
        bool changed = false;
        for (auto &unit : ders_)
        {
            auto &d = unit.state;
            d.p_drp = der::droop_response(f, d.db_uf, d.db_of, d.d_dn) * d.p_caps;
            d.p_mppt = unit.mppt.sample(t);
            unit.p_cmd = der::command_limit(d);
            unit.p_out_prev = d.p_out;
            d = der::step_der(std::move(d), unit.p_cmd, options_.dt);
            changed = changed || d.p_out != unit.p_out_prev;
        }
        if (changed)
        {
            refresh_inputs();
        }
    }

    void TransmissionSystem::step()
    {
        require_initialized();
        apply_due_events();
        update_ders();
        if (inputs_dirty_)
        {
            integrator_.solve_algebraic(*model_, state_);
            inputs_dirty_ = false;
        }
        Eigen::Index freq_row = -1;
        if (options_.frequency_bus)
        {
            freq_row = static_cast<Eigen::Index>(grid_.bus_index(*options_.frequency_bus));
            prev_freq_angle_ = state_.y[freq_row];
        }
        integrator_.step(*model_, state_, options_.dt);
        ++steps_;
        state_.t = static_cast<double>(steps_) * options_.dt;
        if (freq_row >= 0)
        {
            const double dtheta = state_.y[freq_row] - prev_freq_angle_;
            freq_bus_hz_ = grid_.base_hz * (1.0 + dtheta / (model_->ws * options_.dt));
        }
        if (observer_)
        {
            observer_(*this);
        }
    }

    void TransmissionSystem::resolve_algebraic()
    {
        require_initialized();
        integrator_.solve_algebraic(*model_, state_);
        inputs_dirty_ = false;
    }

    void TransmissionSystem::advance_to(double t)
    {
        require_initialized();
        const long target = std::lround(t / options_.dt);
        while (steps_ < target)
        {
            step();
        }
    }

    void TransmissionSystem::set_boundary_load(int bus, Complex s_mva)
    {
        const auto idx = grid_.find_bus(bus);
        if (!idx || !boundary_[*idx])
        {
            throw GridError(GridError::Code::NotBoundary, fmt::format("bus {} is not a boundary bus", bus));
        }
        auto &b = grid_.buses[*idx];
        const double p = s_mva.real() / grid_.base_mva;
        const double q = s_mva.imag() / grid_.base_mva;
        if (p == b.boundary_p && q == b.boundary_q)
        {
            return;
        }
        b.boundary_p = p;
        b.boundary_q = q;
        if (initialized_)
        {
            refresh_inputs();
        }
    }

    Complex TransmissionSystem::boundary_load(int bus) const
    {
        const auto idx = grid_.find_bus(bus);
        if (!idx || !boundary_[*idx])
        {
            throw GridError(GridError::Code::NotBoundary, fmt::format("bus {} is not a boundary bus", bus));
        }
        const auto &b = grid_.buses[*idx];
        return {b.boundary_p * grid_.base_mva, b.boundary_q * grid_.base_mva};
    }

    void TransmissionSystem::set_load_multiplier(int bus, double multiplier)
    {
        const auto k = grid_.bus_index(bus);
        if (load_multiplier_[k] == multiplier)
        {
            return;
        }
        load_multiplier_[k] = multiplier;
        if (initialized_)
        {
            refresh_inputs();
        }
    }

    void TransmissionSystem::set_agc_setpoint(std::string_view generator, double mw)
    {
        const auto gi = grid_.generator_index(generator);
        agc_pext_[gi] = mw / grid_.base_mva;
        for (auto &slot : model_->gens)
        {
            if (slot.generator == gi)
            {
                slot.pext = agc_pext_[gi];
            }
        }
    }

    double TransmissionSystem::agc_setpoint(std::string_view generator) const
    {
        return agc_pext_[grid_.generator_index(generator)] * grid_.base_mva;
    }

    std::size_t TransmissionSystem::der_index(std::string_view id) const
    {
        for (std::size_t i = 0; i < ders_.size(); ++i)
        {
            if (ders_[i].state.id == id)
            {
                return i;
            }
        }
        throw GridError(GridError::Code::UnknownElement, fmt::format("unknown DER '{}'", id));
    }

    const DerUnit &TransmissionSystem::der(std::string_view id) const
    {
        return ders_[der_index(id)];
    }

    void TransmissionSystem::set_der_setpoint(std::string_view der_id, double p_ext_mw, double p_headroom_mw)
    {
        auto &d = ders_[der_index(der_id)].state;
        d.p_ext = p_ext_mw;
        d.p_headroom = p_headroom_mw;
    }

    Complex TransmissionSystem::bus_voltage(int bus) const
    {
        require_initialized();
        const auto k = static_cast<Eigen::Index>(grid_.bus_index(bus));
        const auto nb = static_cast<Eigen::Index>(grid_.buses.size());
        return std::polar(state_.y[nb + k], state_.y[k]);
    }

    Complex TransmissionSystem::get_boundary_voltage(int bus) const
    {
        if (!is_boundary(bus))
        {
            throw GridError(GridError::Code::NotBoundary, fmt::format("bus {} is not a boundary bus", bus));
        }
        return bus_voltage(bus);
    }

    double TransmissionSystem::coi_frequency() const
    {
        const auto &m = *model_;
        std::vector<double> h, w;
        for (std::size_t i = 0; i < m.gens.size(); ++i)
        {
            h.push_back(m.gens[i].h);
            w.push_back(state_.x[static_cast<Eigen::Index>(3 * i + 1)]);
        }
        return transmission::coi_frequency(h, w, grid_.base_hz);
    }

    double TransmissionSystem::measure_frequency() const
    {
        return options_.frequency_bus ? freq_bus_hz_ : coi_frequency();
    }

    double TransmissionSystem::algebraic_residual() const
    {
        const auto &m = *model_;
        VectorXd f(m.state_count()), g(m.algebraic_count());
        m.residual(state_.x, state_.y, f, g);
        return g.lpNorm<Eigen::Infinity>();
    }

    double TransmissionSystem::power_balance_residual() const
    {
        const auto &m = *model_;
        const auto nb = m.bus_count();
        double gen = 0.0;
        for (std::size_t i = 0; i < m.gens.size(); ++i)
        {
            gen += m.electrical_power(m.gens[i], state_.x[static_cast<Eigen::Index>(3 * i)], state_.y);
        }
        double load = m.pl.sum() - m.pder.sum();
        PowerFlowResult pf;
        pf.va = state_.y.head(nb);
        pf.vm = state_.y.tail(nb);
        for (Eigen::Index k = 0; k < nb; ++k)
        {
            const auto &b = base_grid_.buses[static_cast<std::size_t>(k)];
            const double mult = load_scale_[static_cast<std::size_t>(k)] * load_multiplier_[static_cast<std::size_t>(k)];
            const double g_load = nominal_admittance_[static_cast<std::size_t>(k)].real() * mult + b.shunt_g;
            load += g_load * pf.vm[k] * pf.vm[k];
        }
        return gen - load - branch_losses(grid_, pf);
    }

    double TransmissionSystem::total_accelerating_power() const
    {
        const auto &m = *model_;
        double pa = 0.0;
        for (std::size_t i = 0; i < m.gens.size(); ++i)
        {
            const auto s = static_cast<Eigen::Index>(3 * i);
            pa += state_.x[s + 2] - m.electrical_power(m.gens[i], state_.x[s], state_.y);
        }
        return pa;
    }

    double TransmissionSystem::kinetic_deviation() const
    {
        const auto &m = *model_;
        double sum = 0.0;
        for (std::size_t i = 0; i < m.gens.size(); ++i)
        {
            sum += 2.0 * m.gens[i].h * (state_.x[static_cast<Eigen::Index>(3 * i + 1)] - 1.0);
        }
        return sum;
    }

    std::size_t TransmissionSystem::online_slot(std::string_view generator) const
    {
        require_initialized();
        const auto gi = grid_.generator_index(generator);
        const auto &gens = model_->gens;
        for (std::size_t i = 0; i < gens.size(); ++i)
        {
            if (gens[i].generator == gi)
            {
                return i;
            }
        }
        throw GridError(GridError::Code::UnknownElement, fmt::format("generator '{}' is offline", generator));
    }

    double TransmissionSystem::speed(std::string_view generator) const
    {
        return state_.x[static_cast<Eigen::Index>(3 * online_slot(generator) + 1)];
    }

    double TransmissionSystem::rotor_angle(std::string_view generator) const
    {
        return state_.x[static_cast<Eigen::Index>(3 * online_slot(generator))];
    }

    double TransmissionSystem::mechanical_power(std::string_view generator) const
    {
        return state_.x[static_cast<Eigen::Index>(3 * online_slot(generator) + 2)];
    }

    double TransmissionSystem::electrical_power(std::string_view generator) const
    {
        const auto i = online_slot(generator);
        return model_->electrical_power(model_->gens[i], state_.x[static_cast<Eigen::Index>(3 * i)], state_.y);
    }

    std::vector<int> TransmissionSystem::native_load_buses() const
    {
        std::vector<int> out;
        for (const auto &b : base_grid_.buses)
        {
            if (b.load_p != 0.0 || b.load_q != 0.0)
            {
                out.push_back(b.id);
            }
        }
        return out;
    }
} // namespace tdcosim::transmission
