#pragma once

#include <cstdint>
#include <ostream>
#include <random>
#include <vector>

#include "model.hpp"
#include "policies.hpp"

namespace poold {

// Exact continuous-time simulation of the occupancy Markov process by
// competing exponentials: one clock at rate lambda(N) + R(Q), a coin for the
// event type, then policy draws (arrival) or a level draw (departure).
//
// Draw order per event is fixed — timer, type coin, then either a single
// 64-bit decision seed that feeds the policy's own generator, or the
// departure level draw — so coupled replays and cross-policy comparisons
// see identical randomness where they should.

enum class EventKind : std::uint8_t { arrival, overflow, departure };

inline const char* name(EventKind k) {
    switch (k) {
        case EventKind::arrival: return "arrival";
        case EventKind::overflow: return "overflow";
        case EventKind::departure: return "departure";
    }
    return "?";
}

struct Event {
    double t = 0.0;
    EventKind kind = EventKind::arrival;
    std::int32_t level = 0; // join level (pre-join count) or departure level
};

struct Trajectory {
    SystemParams params;
    PolicySpec policy;
    std::uint64_t seed = 0;
    double horizon = 0.0;
    OccupancyState initial;
    std::vector<Event> events;
    std::int64_t arrivals = 0;
    std::int64_t overflows = 0;
    int max_levels = 0;
};

inline void apply_event(OccupancyState& s, const Event& e) {
    switch (e.kind) {
        case EventKind::arrival: s.add_task_at(e.level); break;
        case EventKind::overflow: break;
        case EventKind::departure: s.remove_task_at(e.level); break;
    }
}

// Visit(t, event, state_after) over the whole path. The initial state is
// visited first with a synthetic zero-time event of kind `overflow` (no-op).
template <class Visit>
inline void replay(const Trajectory& traj, Visit&& visit) {
    OccupancyState s = traj.initial;
    visit(0.0, Event{0.0, EventKind::overflow, 0}, s);
    for (const Event& e : traj.events) {
        apply_event(s, e);
        visit(e.t, e, s);
    }
}

namespace detail {

inline void check_initial(const SystemParams& params, const OccupancyState& q0) {
    params.require_valid();
    q0.require_valid();
    if (q0.pools != params.pools || q0.buffer != params.buffer)
        throw std::invalid_argument("initial state does not match system parameters");
}

// One event of the competing-exponentials scheme. Returns false once the
// horizon is passed.
struct StepResult {
    bool within = false;
    Event event;
};

inline StepResult step(OccupancyState& state, const SystemParams& params,
                       const PolicySpec& policy, double horizon, double& t,
                       std::mt19937_64& rng) {
    double rate_dep = total_departure_rate(state, params.service);
    double total = params.arrival_rate + rate_dep;
    t += std::exponential_distribution<double>(total)(rng);
    if (t > horizon) return {};
    double coin = std::generate_canonical<double, 53>(rng) * total;
    StepResult r;
    r.within = true;
    r.event.t = t;
    if (coin <= params.arrival_rate) {
        std::mt19937_64 decision(rng());
        Assignment a = select(policy, state, decision);
        if (a.overflow) {
            r.event.kind = EventKind::overflow;
            r.event.level = a.level;
        } else {
            r.event.kind = EventKind::arrival;
            r.event.level = a.level;
            state.add_task_at(a.level);
        }
    } else {
        double v = (coin - params.arrival_rate);
        int level = 0;
        for (int i = 1; i <= state.levels(); ++i) {
            double gap = state.q(i) - state.q(i + 1);
            double mu = params.service == ServiceMode::infinite_server ? i * gap : gap;
            v -= mu;
            if (v <= 0) { level = i; break; }
        }
        if (level == 0) level = state.levels(); // guard against roundoff at the tail
        r.event.kind = EventKind::departure;
        r.event.level = level;
        state.remove_task_at(level);
    }
    return r;
}

} // namespace detail

inline Trajectory simulate(const SystemParams& params, const PolicySpec& policy,
                           double horizon, const OccupancyState& q0, std::uint64_t seed) {
    detail::check_initial(params, q0);
    Trajectory traj;
    traj.params = params;
    traj.policy = policy;
    traj.seed = seed;
    traj.horizon = horizon;
    traj.initial = q0;
    traj.max_levels = q0.levels();
    if (horizon <= 0) return traj;

    OccupancyState state = q0;
    std::mt19937_64 rng(seed);
    double t = 0.0;
    while (true) {
        auto r = detail::step(state, params, policy, horizon, t, rng);
        if (!r.within) break;
        traj.events.push_back(r.event);
        if (r.event.kind != EventKind::departure) ++traj.arrivals;
        if (r.event.kind == EventKind::overflow) ++traj.overflows;
        traj.max_levels = std::max(traj.max_levels, state.levels());
    }
    return traj;
}

// Time-averaged occupancy and loss with batch-means confidence intervals.
struct SteadyStateReport {
    std::vector<double> q_hat;    // time-averaged Q_i / N
    std::vector<double> ci_half;  // 95% half-widths per level
    double loss = 0.0;            // overflows / arrivals post warm-up
    double loss_ci_half = 0.0;
    double run_time = 0.0;
    double warmup_fraction = 0.0;
    int batches = 0;
    std::int64_t arrivals = 0;
    std::int64_t overflows = 0;
    std::int64_t events = 0;
};

// Streams its own simulation (empty start) rather than materialising a
// trajectory; long runs at large N stay in constant memory.
inline SteadyStateReport steady_state(const SystemParams& params, const PolicySpec& policy,
                                      double run_time, double warmup_fraction, int n_batches,
                                      std::uint64_t seed) {
    params.require_valid();
    if (n_batches < 2) throw std::invalid_argument("need at least 2 batches");
    if (warmup_fraction < 0 || warmup_fraction >= 1)
        throw std::invalid_argument("warmup fraction must lie in [0,1)");
    double t_warm = warmup_fraction * run_time;
    double batch_dur = (run_time - t_warm) / n_batches;
    if (batch_dur * params.arrival_rate < 1.0)
        throw std::invalid_argument("run_time too short for the requested batch count");

    SteadyStateReport rep;
    rep.run_time = run_time;
    rep.warmup_fraction = warmup_fraction;
    rep.batches = n_batches;

    OccupancyState state = OccupancyState::empty(params.pools, params.buffer);
    std::mt19937_64 rng(seed);

    int width = params.buffer ? *params.buffer : 0;
    std::vector<std::vector<double>> batch_q(n_batches); // time-weighted sums per level
    for (auto& b : batch_q) b.assign(width, 0.0);
    std::vector<std::int64_t> batch_arrivals(n_batches, 0), batch_overflows(n_batches, 0);

    auto accumulate = [&](double a, double b, const OccupancyState& s) {
        // add the holding interval [a,b) of `s`, split across batch boundaries
        a = std::max(a, t_warm);
        b = std::min(b, run_time);
        while (a < b) {
            int idx = std::min(n_batches - 1, static_cast<int>((a - t_warm) / batch_dur));
            double end = std::min(b, t_warm + (idx + 1) * batch_dur);
            if (end <= a) end = b; // boundary roundoff: absorb the sliver and move on
            double w = end - a;
            auto& acc = batch_q[idx];
            if (s.levels() > static_cast<int>(acc.size())) acc.resize(s.levels(), 0.0);
            for (int i = 0; i < s.levels(); ++i) acc[i] += w * s.counts[i];
            a = end;
        }
    };

    double t = 0.0;
    while (true) {
        double t_prev = t;
        OccupancyState before = state; // holding state over [t_prev, t)
        auto r = detail::step(state, params, policy, run_time, t, rng);
        accumulate(t_prev, r.within ? t : run_time, before);
        if (!r.within) break;
        ++rep.events;
        if (r.event.kind != EventKind::departure && t >= t_warm) {
            int idx = std::min(n_batches - 1, static_cast<int>((t - t_warm) / batch_dur));
            ++batch_arrivals[idx];
            if (r.event.kind == EventKind::overflow) ++batch_overflows[idx];
        }
    }

    int levels = 0;
    for (auto& b : batch_q) levels = std::max(levels, static_cast<int>(b.size()));
    rep.q_hat.assign(levels, 0.0);
    rep.ci_half.assign(levels, 0.0);
    double tq = student_t_975(n_batches - 1);
    for (int i = 0; i < levels; ++i) {
        std::vector<double> means(n_batches);
        for (int k = 0; k < n_batches; ++k) {
            double sum = i < static_cast<int>(batch_q[k].size()) ? batch_q[k][i] : 0.0;
            means[k] = sum / batch_dur / params.pools;
        }
        double m = 0;
        for (double v : means) m += v;
        m /= n_batches;
        double s2 = 0;
        for (double v : means) s2 += (v - m) * (v - m);
        s2 /= (n_batches - 1);
        rep.q_hat[i] = m;
        rep.ci_half[i] = tq * std::sqrt(s2 / n_batches);
    }

    for (int k = 0; k < n_batches; ++k) {
        rep.arrivals += batch_arrivals[k];
        rep.overflows += batch_overflows[k];
    }
    rep.loss = rep.arrivals > 0 ? double(rep.overflows) / rep.arrivals : 0.0;
    {
        std::vector<double> ratios;
        for (int k = 0; k < n_batches; ++k)
            if (batch_arrivals[k] > 0)
                ratios.push_back(double(batch_overflows[k]) / batch_arrivals[k]);
        if (ratios.size() >= 2) {
            double m = 0;
            for (double v : ratios) m += v;
            m /= ratios.size();
            double s2 = 0;
            for (double v : ratios) s2 += (v - m) * (v - m);
            s2 /= (ratios.size() - 1);
            rep.loss_ci_half = student_t_975(static_cast<int>(ratios.size()) - 1) *
                               std::sqrt(s2 / ratios.size());
        }
    }
    return rep;
}

// CSV export: `t,kind,level,Q1..Qmax`. `stride` keeps every stride-th event
// (the initial state row is always written).
inline void trajectory_csv(const Trajectory& traj, std::ostream& os, int stride = 1) {
    if (stride < 1) stride = 1;
    os << "t,kind,level";
    for (int i = 1; i <= traj.max_levels; ++i) os << ",Q" << i;
    os << "\n";
    std::int64_t row = 0;
    replay(traj, [&](double t, const Event& e, const OccupancyState& s) {
        bool initial = row == 0;
        if (initial || (row - 1) % stride == 0) {
            os << g17(t) << ',' << (initial ? "init" : name(e.kind)) << ','
               << (initial ? 0 : e.level);
            for (int i = 1; i <= traj.max_levels; ++i) os << ',' << s.q(i);
            os << "\n";
        }
        ++row;
    });
}

// CSV export: `level,q_hat,ci_half`.
inline void steady_csv(const SteadyStateReport& rep, std::ostream& os) {
    os << "level,q_hat,ci_half\n";
    for (size_t i = 0; i < rep.q_hat.size(); ++i)
        os << (i + 1) << ',' << g17(rep.q_hat[i]) << ',' << g17(rep.ci_half[i]) << "\n";
}

} // namespace poold
