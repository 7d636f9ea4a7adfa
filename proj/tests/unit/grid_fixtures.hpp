#pragma once

#include "tdcosim/transmission/grid.hpp"

#include <string>

namespace fixtures
{
    using namespace tdcosim::transmission;

    inline Bus bus(int id, BusType type, double load_p = 0.0, double load_q = 0.0,
                   LoadModel model = LoadModel::ConstantImpedance)
    {
        Bus b;
        b.id = id;
        b.type = type;
        b.load_p = load_p;
        b.load_q = load_q;
        b.load_model = model;
        return b;
    }

    inline Branch line(int from, int to, double r, double x, double b = 0.0)
    {
        Branch br;
        br.from = from;
        br.to = to;
        br.r = r;
        br.x = x;
        br.b = b;
        return br;
    }

    inline SyncGenerator gen(std::string id, int bus, double p, double h, double d, double r = 0.05,
                             double tg = 0.5)
    {
        SyncGenerator g;
        g.id = std::move(id);
        g.bus = bus;
        g.p_set = p;
        g.inertia = h;
        g.damping = d;
        g.xd_prime = 0.2;
        g.governor.droop = r;
        g.governor.time_constant = tg;
        g.governor.pmax = 10.0;
        g.governor.pmin = -10.0;
        return g;
    }

    inline Grid two_bus(double load_p, double load_q, double x = 0.1)
    {
        Grid g;
        g.buses = {bus(1, BusType::Slack), bus(2, BusType::PQ, load_p, load_q)};
        g.branches = {line(1, 2, 0.0, x)};
        g.generators = {gen("g1", 1, 0.0, 5.0, 0.0)};
        return g;
    }

    /// Three machines feeding a central load bus, plus a tie between 2 and 3.
    inline Grid three_machine(LoadModel model, double r = 0.01)
    {
        Grid g;
        g.buses = {bus(1, BusType::Slack), bus(2, BusType::PV), bus(3, BusType::PV),
                   bus(4, BusType::PQ, 1.0, 0.3, model), bus(5, BusType::PQ, 0.5, 0.1, model)};
        g.buses[1].v_set = 1.01;
        g.buses[2].v_set = 1.0;
        g.branches = {line(1, 4, r, 0.08, 0.02), line(2, 4, r, 0.10, 0.02), line(3, 5, r, 0.09, 0.02),
                      line(4, 5, r, 0.06, 0.01), line(2, 3, r, 0.15, 0.0)};
        g.generators = {gen("g1", 1, 0.0, 6.0, 1.0), gen("g2", 2, 0.5, 4.0, 1.0), gen("g3", 3, 0.4, 3.0, 1.0)};
        return g;
    }
} // namespace fixtures
