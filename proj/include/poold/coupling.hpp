#pragma once

#include <algorithm>
#include <climits>
#include <cstdint>
#include <cstdlib>
#include <ostream>
#include <random>
#include <vector>

#include "engine.hpp"
#include "model.hpp"
#include "policies.hpp"

namespace poold {

// Paired simulation of two assignment schemes on one probability space.
//
// Arrivals are synchronized; a single departure clock runs at rate
// M(t) = max(Y_A, Y_B). Tasks are indexed (pool rank, position) and colored:
// a task index present in both systems is green, one only in A is blue, one
// only in B is red. Per level i the color counts are
//   green_i = min(Q_i^A, Q_i^B),  blue_i = (Q_i^A - Q_i^B)^+,  red_i = (Q_i^B - Q_i^A)^+.
// At a departure, with probability H/M (H = total green) one green index is
// removed from both systems; otherwise an integer m uniform on {1..M-H} picks
// the m-th smallest blue index in A and the m-th smallest red index in B
// under the order (rank, position) sorted by rank then position, and a system
// whose color count is below m does nothing.
//
// Removing any task from ordered pool i decrements Q at the pool's current
// size, so color bookkeeping happens on per-level counts; no pool identities
// are stored.

struct Coloring {
    std::vector<long long> green, blue, red; // per level, common padded length
    long long total_green = 0;               // H
    long long total_blue = 0;
    long long total_red = 0;

    long long max_total() const { // M
        return total_green + std::max(total_blue, total_red);
    }
};

inline Coloring coloring(const OccupancyState& a, const OccupancyState& b) {
    if (a.pools != b.pools)
        throw std::invalid_argument("coloring needs matching pool counts");
    int len = std::max(a.levels(), b.levels());
    Coloring col;
    col.green.assign(len, 0);
    col.blue.assign(len, 0);
    col.red.assign(len, 0);
    for (int i = 1; i <= len; ++i) {
        long long qa = a.q(i), qb = b.q(i);
        col.green[i - 1] = std::min(qa, qb);
        col.blue[i - 1] = std::max(0LL, qa - qb);
        col.red[i - 1] = std::max(0LL, qb - qa);
        col.total_green += col.green[i - 1];
        col.total_blue += col.blue[i - 1];
        col.total_red += col.red[i - 1];
    }
    return col;
}

inline long long sum_abs_diff(const OccupancyState& a, const OccupancyState& b) {
    int len = std::max(a.levels(), b.levels());
    long long s = 0;
    for (int i = 1; i <= len; ++i) s += std::abs((long long)a.q(i) - b.q(i));
    return s;
}

struct CoupledState {
    OccupancyState a, b;
    std::int64_t delta = 0; // differ-in-decision counter
};

namespace detail {

// Pool size of ordered pool `rank` without the range re-check.
inline int pool_size_at(const OccupancyState& s, int rank) {
    int threshold = s.pools - rank + 1;
    int i = 0;
    while (i < s.levels() && s.counts[i] >= threshold) ++i;
    return i;
}

// Number of colored (counts_x minus green) indices at pools 1..i, rank-major.
// Tasks of X at level j occupy ranks {N-Qx_j+1 .. N}; the green subset is the
// top g_j of those, leaving the colored ones at ranks {N-Qx_j+1 .. N-g_j}.
inline long long colored_before(const OccupancyState& x, const std::vector<long long>& green,
                                int upto_rank) {
    long long c = 0;
    for (int j = 1; j <= x.levels(); ++j) {
        long long qx = x.q(j);
        if (qx == 0) break;
        long long g = green[j - 1];
        c += std::max(0LL, upto_rank - (x.pools - qx));
        c -= std::max(0LL, upto_rank - (x.pools - g));
    }
    return c;
}

// Rank of the pool holding the m-th smallest colored index of X.
inline int colored_mth_rank(const OccupancyState& x, const std::vector<long long>& green,
                            long long m) {
    int lo = 1, hi = x.pools;
    while (lo < hi) {
        int mid = lo + (hi - lo) / 2;
        if (colored_before(x, green, mid) >= m) hi = mid;
        else lo = mid + 1;
    }
    return lo;
}

} // namespace detail

struct CoupledDeparture {
    int level_a = -1; // Q-level decremented in each system; -1 = untouched
    int level_b = -1;
    bool green = false;
};

// One departure of the coupled construction. `u` is the branch coin drawn at
// the departure epoch; positional draws come from `aux`.
inline CoupledDeparture coupled_departure(CoupledState& cs, double u, std::mt19937_64& aux) {
    Coloring col = coloring(cs.a, cs.b);
    long long m_total = col.max_total();
    if (m_total <= 0) throw std::invalid_argument("coupled departure on empty systems");
    double p = double(col.total_green) / double(m_total);
    CoupledDeparture out;
    if (col.total_green > 0 && u <= p) {
        // uniform green index, enumerated level-major
        out.green = true;
        long long pick = std::uniform_int_distribution<long long>(1, col.total_green)(aux);
        int level = 0;
        long long cum = 0;
        for (size_t j = 0; j < col.green.size(); ++j) {
            cum += col.green[j];
            if (cum >= pick) { level = static_cast<int>(j + 1); break; }
        }
        long long offset = pick - (cum - col.green[level - 1]);
        int rank = static_cast<int>(cs.a.pools - col.green[level - 1] + offset);
        out.level_a = detail::pool_size_at(cs.a, rank);
        out.level_b = detail::pool_size_at(cs.b, rank);
        cs.a.remove_task_at(out.level_a);
        cs.b.remove_task_at(out.level_b);
    } else {
        long long span = m_total - col.total_green;
        long long m = std::uniform_int_distribution<long long>(1, span)(aux);
        if (m <= col.total_blue) {
            int rank = detail::colored_mth_rank(cs.a, col.green, m);
            out.level_a = detail::pool_size_at(cs.a, rank);
            cs.a.remove_task_at(out.level_a);
        }
        if (m <= col.total_red) {
            int rank = detail::colored_mth_rank(cs.b, col.green, m);
            out.level_b = detail::pool_size_at(cs.b, rank);
            cs.b.remove_task_at(out.level_b);
        }
    }
    return out;
}

struct CoupledEvent {
    double t = 0.0;
    EventKind kind = EventKind::arrival; // arrival covers overflow decisions too
    std::int32_t rank_a = -1, rank_b = -1;   // arrival decisions; -1 for departures
    std::int32_t level_a = -1, level_b = -1; // applied Q-level change; -1 = none
    bool differ = false;
    std::int64_t delta = 0;         // running counter
    std::int64_t sum_abs = 0;       // sum_i |Q_i^A - Q_i^B| after the event
};

// Pathwise check margins; every inequality must come out <= 0.
struct CoupleChecks {
    long long two_delta_margin = 0;       // max_t (sum|diff| - 2*delta - sum|diff|(0))
    bool sandwich_checked = false;        // only for JSQ vs CJSQ-class, equal starts
    int sandwich_n = 0;
    std::vector<long long> sandwich_lower; // max_t (prefix_A - k n - prefix_B), per k
    std::vector<long long> sandwich_upper; // max_t (prefix_B - prefix_A), per k
    std::vector<long long> sup_abs_diff;   // per level, sup_t |Q_i^A - Q_i^B|
    long long sup_sum_abs_diff = 0;
    std::int64_t delta = 0;
    std::int64_t arrivals = 0, overflows_a = 0, overflows_b = 0, events = 0;
    bool identical_paths = true;

    bool all_hold() const {
        if (two_delta_margin > 0) return false;
        for (auto v : sandwich_lower)
            if (v > 0) return false;
        for (auto v : sandwich_upper)
            if (v > 0) return false;
        return true;
    }
};

struct CoupledTrace {
    SystemParams params;
    PolicySpec policy_a, policy_b;
    std::uint64_t seed = 0;
    double horizon = 0.0;
    OccupancyState initial_a, initial_b;
    std::vector<CoupledEvent> events;
    CoupleChecks checks;
    int max_levels = 0;
};

// Draw order per event: timer, type coin, then for an arrival one shared
// 64-bit decision seed that feeds both policies' generators (so two sampling
// policies see the same sampled ranks), or for a departure the branch coin U
// followed by the positional draw.
inline CoupledTrace simulate_coupled(const SystemParams& params, const PolicySpec& policy_a,
                                     const PolicySpec& policy_b, double horizon,
                                     const OccupancyState& q0a, const OccupancyState& q0b,
                                     std::uint64_t seed, bool keep_events = true) {
    detail::check_initial(params, q0a);
    detail::check_initial(params, q0b);

    CoupledTrace trace;
    trace.params = params;
    trace.policy_a = policy_a;
    trace.policy_b = policy_b;
    trace.seed = seed;
    trace.horizon = horizon;
    trace.initial_a = q0a;
    trace.initial_b = q0b;
    trace.max_levels = std::max(q0a.levels(), q0b.levels());

    CoupledState cs{q0a, q0b, 0};
    CoupleChecks& ck = trace.checks;
    long long sum0 = sum_abs_diff(q0a, q0b);
    bool equal_start = q0a == q0b;
    int sandwich_n = -1;
    if (equal_start && policy_a.kind == PolicyKind::jsq &&
        (policy_b.kind == PolicyKind::cjsq_uniform || policy_b.kind == PolicyKind::jsq_n_d)) {
        ck.sandwich_checked = true;
        sandwich_n = policy_b.n.eval_n(params.pools);
        ck.sandwich_n = sandwich_n;
    }

    auto observe = [&](const CoupledEvent& ev) {
        int len = std::max(cs.a.levels(), cs.b.levels());
        trace.max_levels = std::max(trace.max_levels, len);
        if (static_cast<int>(ck.sup_abs_diff.size()) < len) ck.sup_abs_diff.resize(len, 0);
        long long sum = 0, pa = 0, pb = 0;
        if (ck.sandwich_checked && static_cast<int>(ck.sandwich_lower.size()) < len) {
            ck.sandwich_lower.resize(len, LLONG_MIN);
            ck.sandwich_upper.resize(len, LLONG_MIN);
        }
        for (int i = 1; i <= len; ++i) {
            long long qa = cs.a.q(i), qb = cs.b.q(i);
            long long d = std::abs(qa - qb);
            sum += d;
            ck.sup_abs_diff[i - 1] = std::max(ck.sup_abs_diff[i - 1], d);
            if (ck.sandwich_checked) {
                pa += qa;
                pb += qb;
                ck.sandwich_lower[i - 1] =
                    std::max(ck.sandwich_lower[i - 1], pa - (long long)i * sandwich_n - pb);
                ck.sandwich_upper[i - 1] = std::max(ck.sandwich_upper[i - 1], pb - pa);
            }
        }
        ck.sup_sum_abs_diff = std::max(ck.sup_sum_abs_diff, sum);
        ck.two_delta_margin = std::max(ck.two_delta_margin, sum - 2 * cs.delta - sum0);
        if (sum != 0) ck.identical_paths = false;
        ++ck.events;
        if (keep_events) {
            CoupledEvent e = ev;
            e.delta = cs.delta;
            e.sum_abs = sum;
            trace.events.push_back(e);
        }
    };

    if (horizon <= 0) return trace;
    std::mt19937_64 rng(seed);
    double t = 0.0;
    while (true) {
        long long ya = cs.a.total_tasks(), yb = cs.b.total_tasks();
        double m_rate = static_cast<double>(std::max(ya, yb));
        double total = params.arrival_rate + m_rate;
        t += std::exponential_distribution<double>(total)(rng);
        if (t > horizon) break;
        double coin = std::generate_canonical<double, 53>(rng) * total;
        CoupledEvent ev;
        ev.t = t;
        if (coin <= params.arrival_rate) {
            std::uint64_t decision_seed = rng();
            std::mt19937_64 pa(decision_seed), pb(decision_seed);
            Assignment aa = select(policy_a, cs.a, pa);
            Assignment ab = select(policy_b, cs.b, pb);
            ev.kind = EventKind::arrival;
            ev.rank_a = aa.rank;
            ev.rank_b = ab.rank;
            ev.differ = aa.rank != ab.rank;
            if (ev.differ) ++cs.delta;
            ++ck.arrivals;
            if (aa.overflow) ++ck.overflows_a;
            else { ev.level_a = aa.level; cs.a.add_task_at(aa.level); }
            if (ab.overflow) ++ck.overflows_b;
            else { ev.level_b = ab.level; cs.b.add_task_at(ab.level); }
        } else {
            double u = std::generate_canonical<double, 53>(rng);
            CoupledDeparture dep = coupled_departure(cs, u, rng);
            ev.kind = EventKind::departure;
            ev.level_a = dep.level_a;
            ev.level_b = dep.level_b;
        }
        observe(ev);
    }
    ck.delta = cs.delta;
    return trace;
}

// Empirical g(N)-alikeness metrics of a coupled trace, plus a pointwise
// re-verification of the two-delta inequality.
struct AlikenessGap {
    std::vector<double> per_level; // sup_t |Q_i^A - Q_i^B| / g
    double sum_over_g = 0.0;       // sup_t sum_i |Q_i^A - Q_i^B| / g
    bool two_delta_ok = true;
};

inline AlikenessGap delta_and_gap(const CoupledTrace& trace, double g) {
    if (g <= 0) throw std::invalid_argument("alikeness scale g must be positive");
    if (trace.events.empty()) throw std::invalid_argument("empty coupled trace");
    OccupancyState a = trace.initial_a, b = trace.initial_b;
    long long sum0 = sum_abs_diff(a, b);
    std::vector<long long> sup;
    long long sup_sum = 0;
    AlikenessGap gap;
    auto scan = [&]() {
        int len = std::max(a.levels(), b.levels());
        if (static_cast<int>(sup.size()) < len) sup.resize(len, 0);
        long long sum = 0;
        for (int i = 1; i <= len; ++i) {
            long long d = std::abs((long long)a.q(i) - b.q(i));
            sup[i - 1] = std::max(sup[i - 1], d);
            sum += d;
        }
        sup_sum = std::max(sup_sum, sum);
        return sum;
    };
    scan();
    for (const auto& ev : trace.events) {
        if (ev.kind == EventKind::arrival) {
            if (ev.level_a >= 0) a.add_task_at(ev.level_a);
            if (ev.level_b >= 0) b.add_task_at(ev.level_b);
        } else {
            if (ev.level_a >= 0) a.remove_task_at(ev.level_a);
            if (ev.level_b >= 0) b.remove_task_at(ev.level_b);
        }
        long long sum = scan();
        if (sum > 2 * ev.delta + sum0) gap.two_delta_ok = false;
    }
    gap.per_level.reserve(sup.size());
    for (long long v : sup) gap.per_level.push_back(double(v) / g);
    gap.sum_over_g = double(sup_sum) / g;
    return gap;
}

// CSV export: `t,kind,rankA,rankB,differ,delta,sumAbsDiff,QA...,QB...`.
inline void coupled_csv(const CoupledTrace& trace, std::ostream& os, int stride = 1) {
    if (stride < 1) stride = 1;
    os << "t,kind,rankA,rankB,differ,delta,sumAbsDiff";
    for (int i = 1; i <= trace.max_levels; ++i) os << ",QA" << i;
    for (int i = 1; i <= trace.max_levels; ++i) os << ",QB" << i;
    os << "\n";
    OccupancyState a = trace.initial_a, b = trace.initial_b;
    auto row = [&](double t, const char* kind, int ra, int rb, bool differ, std::int64_t delta,
                   std::int64_t sum) {
        os << g17(t) << ',' << kind << ',' << ra << ',' << rb << ',' << (differ ? 1 : 0) << ','
           << delta << ',' << sum;
        for (int i = 1; i <= trace.max_levels; ++i) os << ',' << a.q(i);
        for (int i = 1; i <= trace.max_levels; ++i) os << ',' << b.q(i);
        os << "\n";
    };
    row(0.0, "init", -1, -1, false, 0, sum_abs_diff(a, b));
    std::int64_t idx = 0;
    for (const auto& ev : trace.events) {
        if (ev.kind == EventKind::arrival) {
            if (ev.level_a >= 0) a.add_task_at(ev.level_a);
            if (ev.level_b >= 0) b.add_task_at(ev.level_b);
        } else {
            if (ev.level_a >= 0) a.remove_task_at(ev.level_a);
            if (ev.level_b >= 0) b.remove_task_at(ev.level_b);
        }
        if (idx++ % stride == 0)
            row(ev.t, name(ev.kind), ev.rank_a, ev.rank_b, ev.differ, ev.delta, ev.sum_abs);
    }
}

} // namespace poold
