#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "model.hpp"
#include "policies.hpp"

namespace poold {

// ---------------------------------------------------------------------------
// Normal and Erlang closed forms
// ---------------------------------------------------------------------------

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

// CDF via the complementary error function; well below 1e-12 absolute error
// over the whole real line.
inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// Blocking probability of an M/M/C/C system with offered load a, by the
// stable recursion B(0) = 1, B(c) = a B(c-1) / (c + a B(c-1)).
inline double erlang_b(long long capacity, double offered_load) {
    if (capacity < 0) throw std::invalid_argument("capacity must be nonnegative");
    if (offered_load < 0) throw std::invalid_argument("offered load must be nonnegative");
    double b = 1.0;
    for (long long c = 1; c <= capacity; ++c) b = offered_load * b / (c + offered_load * b);
    return b;
}

// Probability that a d-sample misses all of the n+1 lowest ordered pools.
inline double p_reject(long long pools, long long n, long long d) {
    if (n < 0 || n >= pools) throw std::invalid_argument("n out of range");
    if (d < 1) throw std::invalid_argument("d must be positive");
    return std::pow(1.0 - double(n + 1) / pools, static_cast<double>(d));
}

// Erlang bracketing of the steady-state loss. The lower bound is the plain
// loss system with pooled capacity B*N; the upper bound rejects a fraction
// p(n,d) upfront and runs the remainder through a loss system with capacity
// B*(N-n) and the admitted load. `literal_admitted_p` instead feeds the
// rejected fraction itself as the admitted load scale, for comparison only.
struct LossBounds {
    double lower = 0.0;
    double upper = 0.0;
    double p = 0.0; // upfront rejection fraction of the modified system
};

inline LossBounds loss_bounds(const SystemParams& params, long long n, long long d,
                              bool literal_admitted_p = false) {
    params.require_valid();
    if (!params.buffer) throw std::invalid_argument("loss bounds need a finite buffer");
    if (n >= params.pools) throw std::invalid_argument("n must be below N");
    long long b = *params.buffer;
    LossBounds out;
    out.p = p_reject(params.pools, n, d);
    out.lower = erlang_b(b * params.pools, params.arrival_rate);
    double admitted = params.arrival_rate * (literal_admitted_p ? out.p : 1.0 - out.p);
    out.upper = out.p + (1.0 - out.p) * erlang_b(b * (params.pools - n), admitted);
    return out;
}

// Limit of sqrt(N) times the loss probability in the Halfin-Whitt window:
// phi(beta) / (sqrt(B) Phi(beta)).
inline double asymptotic_scaled_loss(int buffer, double beta) {
    if (buffer < 1) throw std::invalid_argument("buffer must be positive");
    return normal_pdf(beta) / (std::sqrt(static_cast<double>(buffer)) * normal_cdf(beta));
}

// ---------------------------------------------------------------------------
// Exact small-instance stationary solve
// ---------------------------------------------------------------------------

namespace detail {

// pi G = 0, sum pi = 1 by dense partial-pivot elimination on G^T with the
// last equation replaced by the normalization.
inline std::vector<double> stationary_from_generator(std::vector<std::vector<double>> g) {
    size_t n = g.size();
    std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) a[j][i] = g[i][j]; // transpose
    for (size_t j = 0; j < n; ++j) a[n - 1][j] = 1.0;
    a[n - 1][n] = 1.0;
    for (size_t col = 0; col < n; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        if (std::abs(a[col][col]) < 1e-300)
            throw std::runtime_error("singular generator (chain not irreducible?)");
        for (size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double factor = a[r][col] / a[col][col];
            if (factor == 0.0) continue;
            for (size_t c = col; c <= n; ++c) a[r][c] -= factor * a[col][c];
        }
    }
    std::vector<double> pi(n);
    for (size_t i = 0; i < n; ++i) pi[i] = a[i][n] / a[i][i];
    return pi;
}

inline void enumerate_states(OccupancyState& cur, int level, int bound, int buffer,
                             std::vector<OccupancyState>& out) {
    if (level > buffer) {
        OccupancyState s = cur;
        s.trim();
        out.push_back(std::move(s));
        return;
    }
    for (int v = 0; v <= bound; ++v) {
        cur.counts[level - 1] = v;
        enumerate_states(cur, level + 1, v, buffer, out);
    }
}

} // namespace detail

// Stationary distribution of a birth-death chain on {0..n} from its
// generator, rates birth[i]: i->i+1 and death[i]: i->i-1.
inline std::vector<double> birth_death_stationary(const std::vector<double>& birth,
                                                  const std::vector<double>& death) {
    size_t n = birth.size() + 1;
    if (death.size() + 1 != n) throw std::invalid_argument("rate vectors disagree");
    std::vector<std::vector<double>> g(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i + 1 < n; ++i) {
        g[i][i + 1] = birth[i];
        g[i][i] -= birth[i];
        g[i + 1][i] = death[i];
        g[i + 1][i + 1] -= death[i];
    }
    return detail::stationary_from_generator(std::move(g));
}

struct StationarySolve {
    std::vector<OccupancyState> states;
    std::vector<double> pi;
    std::vector<double> blocked; // per state, probability an arrival is discarded
    double loss = 0.0;           // stationary fraction of discarded arrivals
    std::unordered_map<std::string, int> index; // state record -> position
};

// Brute-force CTMC solve over all occupancy states for a finite buffer; the
// policy enters through its exact decision law over ordered ranks.
inline StationarySolve exact_stationary_small(const SystemParams& params,
                                              const PolicySpec& policy) {
    params.require_valid();
    if (!params.buffer)
        throw std::invalid_argument("exact solve needs a finite buffer");
    int n_pools = params.pools, buffer = *params.buffer;

    double log_size = 0; // C(N+B, B) states
    for (int i = 1; i <= buffer; ++i)
        log_size += std::log(double(n_pools + i) / i);
    if (log_size > std::log(1e5))
        throw std::invalid_argument("state space exceeds 1e5 states");

    StationarySolve out;
    {
        OccupancyState cur = OccupancyState::empty(n_pools, buffer);
        cur.counts.assign(buffer, 0);
        detail::enumerate_states(cur, 1, n_pools, buffer, out.states);
    }
    size_t n_states = out.states.size();
    if (n_states > 20000)
        throw std::invalid_argument("state space exceeds the dense solver budget");
    for (size_t i = 0; i < n_states; ++i) out.index[out.states[i].record()] = static_cast<int>(i);

    std::vector<double> law = rank_law(policy, n_pools);
    std::vector<std::vector<double>> g(n_states, std::vector<double>(n_states, 0.0));
    out.blocked.assign(n_states, 0.0);
    for (size_t si = 0; si < n_states; ++si) {
        const OccupancyState& s = out.states[si];
        // arrivals, split over the decision law; level = B means discard
        for (int c = 1; c <= n_pools; ++c) {
            if (law[c - 1] == 0.0) continue;
            int level = ordered_pool_size(s, c);
            if (level >= buffer) {
                out.blocked[si] += law[c - 1];
                continue;
            }
            OccupancyState to = s;
            to.add_task_at(level);
            int ti = out.index.at(to.record());
            double rate = params.arrival_rate * law[c - 1];
            g[si][ti] += rate;
            g[si][si] -= rate;
        }
        // departures
        std::vector<double> mu = departure_rates(s, params.service);
        for (int i = 1; i <= s.levels(); ++i) {
            if (mu[i - 1] <= 0) continue;
            OccupancyState to = s;
            to.remove_task_at(i);
            int ti = out.index.at(to.record());
            g[si][ti] += mu[i - 1];
            g[si][si] -= mu[i - 1];
        }
    }
    out.pi = detail::stationary_from_generator(std::move(g));
    for (size_t i = 0; i < n_states; ++i) out.loss += out.pi[i] * out.blocked[i];
    return out;
}

// ---------------------------------------------------------------------------
// Tagged pool / tagged task
// ---------------------------------------------------------------------------

// The steady-state task count at one pool flips between K and K+1: up at rate
// (K+1) f / (1-f), down at rate K+1, stationary (1-f, f). Integer lambda
// degenerates to the constant K.
struct TaggedProcess {
    int base_level = 0; // K
    double up_rate = 0.0;
    double down_rate = 0.0;
    double stat_low = 1.0;  // P(S = K)
    double stat_high = 0.0; // P(S = K+1)
    bool degenerate = false;
};

inline TaggedProcess tagged_pool(double lambda) {
    if (lambda <= 0) throw std::invalid_argument("lambda must be positive");
    TaggedProcess tp;
    tp.base_level = static_cast<int>(std::floor(lambda));
    double f = lambda - tp.base_level;
    if (f < 1e-12) {
        tp.degenerate = true;
        return tp;
    }
    tp.up_rate = (tp.base_level + 1) * f / (1.0 - f);
    tp.down_rate = tp.base_level + 1;
    tp.stat_low = 1.0 - f;
    tp.stat_high = f;
    return tp;
}

// Time-average of h over the pool a tagged task joins, which holds K other
// tasks with weight K(1-f)/lambda and K+1 with the complementary weight. The
// two weights are formed to sum to one exactly.
inline double tagged_task_measure(double lambda, const std::function<double(long long)>& h) {
    if (lambda <= 0) throw std::invalid_argument("lambda must be positive");
    long long k = static_cast<long long>(std::floor(lambda));
    double f = lambda - k;
    double w_low = f < 1e-12 ? 1.0 : (1.0 - f) * k / lambda;
    double w_high = 1.0 - w_low;
    return w_low * h(k) + w_high * h(k + 1);
}

// Closed form shipped for the reciprocal-of-concurrency measure
// h(x) = 1/(x+1): (K(K+2) - f) / ((K+1)(K+2)).
inline double tagged_task_harmonic(double lambda) {
    if (lambda <= 0) throw std::invalid_argument("lambda must be positive");
    double k = std::floor(lambda);
    double f = lambda - k;
    return (k * (k + 2) - f) / ((k + 1) * (k + 2));
}

// ---------------------------------------------------------------------------
// Alikeness criteria
// ---------------------------------------------------------------------------

// Evaluates the sufficient sampling condition d(N) n(N)/N - log(N/g(N)) with
// the constructive window width n(N): N/log d(N) when g is of full order, and
// g / log h(N) with h = d (g/N) / log(N/g) otherwise. `fluid_ok` asks whether
// d(N) grows at all (sample-size divergence); `diffusion_ok` evaluates the
// same condition at g = sqrt(N).
struct AlikenessReport {
    bool fluid_ok = false;
    bool diffusion_ok = false;
    double condition_value = 0.0; // at the supplied g
    bool condition_ok = false;    // condition_value > threshold
    long long suggested_n = 0;    // constructive n(N) at the supplied g
    double threshold = 5.0;
};

namespace detail {

struct ConditionEval {
    double value = -1e300;
    long long n = 0;
    bool feasible = false;
};

inline ConditionEval eval_condition(long long pools, double g_raw, int d) {
    ConditionEval ev;
    double g = std::min(std::max(g_raw, 1.0), static_cast<double>(pools));
    double n_raw;
    if (g >= static_cast<double>(pools)) {
        if (d < 2) return ev;
        n_raw = pools / std::log(static_cast<double>(d));
    } else {
        double h = d * (g / pools) / std::log(pools / g);
        if (h <= 1.0) return ev;
        n_raw = g / std::log(h);
    }
    long long n = static_cast<long long>(std::ceil(n_raw));
    n = std::max(0LL, std::min(n, pools - 1));
    ev.n = n;
    ev.value = double(d) * double(n) / double(pools) - std::log(double(pools) / g);
    ev.feasible = true;
    return ev;
}

} // namespace detail

inline AlikenessReport alikeness_criteria(long long pools, const GrowthSpec& g,
                                          const GrowthSpec& d) {
    if (pools < 2) throw std::invalid_argument("need at least two pools");
    AlikenessReport rep;
    int d_n = d.eval_d(pools);
    rep.fluid_ok = d_n >= 2 &&
                   (d.diverges() || (d.kind == GrowthSpec::Kind::table &&
                                     d_n >= std::log(static_cast<double>(pools))));
    auto at_g = detail::eval_condition(pools, g.raw(pools), d_n);
    rep.condition_value = at_g.value;
    rep.suggested_n = at_g.n;
    rep.condition_ok = at_g.feasible && at_g.value > rep.threshold;
    auto at_sqrt = detail::eval_condition(pools, std::sqrt(static_cast<double>(pools)), d_n);
    rep.diffusion_ok = at_sqrt.feasible && at_sqrt.value > rep.threshold;
    return rep;
}

} // namespace poold
