#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "util.hpp"

namespace poold {

// How tasks leave a pool: every task served concurrently (departure rate of a
// pool equals its task count) or one at a time (rate 1 per busy pool).
enum class ServiceMode { infinite_server, single_server };

inline const char* name(ServiceMode m) {
    return m == ServiceMode::infinite_server ? "infinite" : "single";
}

inline ServiceMode parse_service_mode(const std::string& s) {
    if (s == "infinite" || s == "infinite_server") return ServiceMode::infinite_server;
    if (s == "single" || s == "single_server") return ServiceMode::single_server;
    throw std::invalid_argument("unknown service mode '" + s + "' (expected infinite|single)");
}

// Occupancy state of a bank of `pools` server pools: counts[i-1] = Q_i is the
// number of pools holding at least i tasks. Levels beyond the stored length
// are zero; the canonical form has no trailing zeros. `buffer` is the per-pool
// task cap B (nullopt = unbounded).
struct OccupancyState {
    std::vector<int> counts;
    int pools = 1;
    std::optional<int> buffer;

    static OccupancyState empty(int pools, std::optional<int> buffer) {
        OccupancyState s;
        s.pools = pools;
        s.buffer = buffer;
        return s;
    }

    int q(int i) const {
        return (i >= 1 && i <= static_cast<int>(counts.size())) ? counts[i - 1] : 0;
    }
    int levels() const { return static_cast<int>(counts.size()); }

    long long total_tasks() const {
        long long y = 0;
        for (int c : counts) y += c;
        return y;
    }

    void trim() {
        while (!counts.empty() && counts.back() == 0) counts.pop_back();
    }

    bool valid() const {
        if (pools < 1) return false;
        if (buffer && (*buffer < 1 || levels() > *buffer)) return false;
        int prev = pools;
        for (int c : counts) {
            if (c < 0 || c > prev) return false;
            prev = c;
        }
        return true;
    }

    void require_valid() const {
        if (!valid()) throw std::invalid_argument("invalid occupancy state");
    }

    // One arriving task joins a pool currently holding `level` tasks.
    void add_task_at(int level) {
        if (buffer && level >= *buffer)
            throw std::logic_error("join at a full pool");
        if (level == levels()) counts.push_back(0);
        if (level > levels())
            throw std::logic_error("join level beyond occupied range");
        ++counts[level];
        int cap = level == 0 ? pools : counts[level - 1];
        if (counts[level] > cap)
            throw std::logic_error("occupancy update broke monotonicity");
    }

    // One task leaves a pool currently holding `level` tasks.
    void remove_task_at(int level) {
        if (level < 1 || level > levels() || counts[level - 1] == 0)
            throw std::logic_error("departure from an unoccupied level");
        --counts[level - 1];
        if (counts[level - 1] < q(level + 1))
            throw std::logic_error("occupancy update broke monotonicity");
        trim();
    }

    // Plain-text record: N, B, Q_1..Q_B ("inf" for unbounded B, in which case
    // only the occupied levels are listed).
    std::string record() const {
        std::string out = std::to_string(pools);
        out += ',';
        out += buffer ? std::to_string(*buffer) : std::string("inf");
        int width = buffer ? *buffer : levels();
        for (int i = 1; i <= width; ++i) {
            out += ',';
            out += std::to_string(q(i));
        }
        return out;
    }

    static OccupancyState from_record(const std::string& text) {
        auto parts = split(text, ',');
        if (parts.size() < 2) throw std::invalid_argument("occupancy record needs at least N,B");
        OccupancyState s;
        s.pools = static_cast<int>(parse_int(parts[0], "pool count"));
        std::string b = poold::trim(parts[1]);
        if (b != "inf") s.buffer = static_cast<int>(parse_int(b, "buffer"));
        for (size_t i = 2; i < parts.size(); ++i)
            s.counts.push_back(static_cast<int>(parse_int(parts[i], "count")));
        s.trim();
        s.require_valid();
        return s;
    }

    bool operator==(const OccupancyState&) const = default;
};

// Fluid-scaled occupancy q = Q/N, values in [0,1], nonincreasing in the level.
struct FluidState {
    std::vector<double> q;

    FluidState() = default;
    explicit FluidState(std::vector<double> v) : q(std::move(v)) {}

    double at(int i) const {
        return (i >= 1 && i <= static_cast<int>(q.size())) ? q[i - 1] : 0.0;
    }
    int levels() const { return static_cast<int>(q.size()); }

    bool valid(double eps = 1e-9) const {
        double prev = 1.0;
        for (double v : q) {
            if (v < -eps || v > prev + eps) return false;
            prev = v;
        }
        return true;
    }
};

// Product metric on fluid states: sum_i |a_i - b_i| / 2^i.
inline double fluid_distance(const FluidState& a, const FluidState& b) {
    int len = std::max(a.levels(), b.levels());
    double w = 0.5, d = 0.0;
    for (int i = 1; i <= len; ++i, w *= 0.5) d += w * std::abs(a.at(i) - b.at(i));
    return d;
}

// Tolerance for "q_i equals one" tests on integrator output, which parks
// exactly-full levels a rounding error below 1.
inline constexpr double kUnitEps = 1e-9;

// Minimum task count among all pools: smallest i >= 0 with q_{i+1} < 1,
// reading q as zero past the stored length.
inline int m_of_q(const FluidState& s) {
    for (int i = 0; i < s.levels(); ++i)
        if (s.q[i] < 1.0 - kUnitEps) return i;
    return s.levels();
}

// Fluid departure rate mu_i(q) at level i.
inline double fluid_rate(const FluidState& s, int i, ServiceMode mode) {
    if (i < 1) return 0.0;
    double gap = s.at(i) - s.at(i + 1);
    return mode == ServiceMode::infinite_server ? i * gap : gap;
}

// Fraction p_i of arrivals routed to pools with exactly i tasks (i = 0..m).
// All mass sits on levels m-1 and m: level m-1 takes min(mu_m/lambda, 1) and
// level m the rest. For m = 0 everything lands on the empty pools.
inline std::vector<double> assignment_fractions(const FluidState& s, double lambda,
                                                ServiceMode mode) {
    if (lambda <= 0) throw std::invalid_argument("assignment_fractions needs lambda > 0");
    int m = m_of_q(s);
    std::vector<double> p(m + 1, 0.0);
    double mu_m = m == 0 ? 0.0 : fluid_rate(s, m, mode);
    if (lambda <= mu_m) {
        p[m - 1] = 1.0;
    } else {
        double a = mu_m / lambda;
        if (m >= 1) p[m - 1] = a;
        p[m] = 1.0 - a;
    }
    return p;
}

// Unscaled per-level departure rates mu_i(Q).
inline std::vector<double> departure_rates(const OccupancyState& s, ServiceMode mode) {
    std::vector<double> mu(s.levels(), 0.0);
    for (int i = 1; i <= s.levels(); ++i) {
        double gap = s.q(i) - s.q(i + 1);
        mu[i - 1] = mode == ServiceMode::infinite_server ? i * gap : gap;
    }
    return mu;
}

inline double total_departure_rate(const OccupancyState& s, ServiceMode mode) {
    double r = 0.0;
    for (int i = 1; i <= s.levels(); ++i) {
        double gap = s.q(i) - s.q(i + 1);
        r += mode == ServiceMode::infinite_server ? i * gap : gap;
    }
    return r;
}

// Rebuild the occupancy state from per-pool task counts.
inline OccupancyState from_pool_sizes(const std::vector<int>& sizes,
                                      std::optional<int> buffer) {
    OccupancyState s;
    s.pools = static_cast<int>(sizes.size());
    s.buffer = buffer;
    if (s.pools < 1) throw std::invalid_argument("need at least one pool");
    int max_size = 0;
    for (int v : sizes) {
        if (v < 0) throw std::invalid_argument("negative pool size");
        if (buffer && v > *buffer) throw std::invalid_argument("pool size exceeds buffer");
        max_size = std::max(max_size, v);
    }
    s.counts.assign(max_size, 0);
    for (int v : sizes)
        for (int i = 0; i < v; ++i) ++s.counts[i];
    return s;
}

// Task count of the c-th lowest ordered pool: I(c) = max{i : Q_i >= N-c+1},
// zero when no level qualifies. Nondecreasing in c.
inline int ordered_pool_size(const OccupancyState& s, int rank) {
    if (rank < 1 || rank > s.pools)
        throw std::invalid_argument("pool rank out of range");
    int threshold = s.pools - rank + 1;
    int i = 0;
    while (i < s.levels() && s.counts[i] >= threshold) ++i;
    return i;
}

inline std::vector<int> pool_sizes(const OccupancyState& s) {
    std::vector<int> out(s.pools);
    for (int c = 1; c <= s.pools; ++c) out[c - 1] = ordered_pool_size(s, c);
    return out;
}

// System scale: N pools, buffer B, total arrival rate lambda(N), service mode.
// lambda = lambda(N)/N, K = floor(lambda), f = lambda - K.
struct SystemParams {
    int pools = 1;
    std::optional<int> buffer;
    double arrival_rate = 1.0; // lambda(N)
    ServiceMode service = ServiceMode::infinite_server;

    double lambda() const { return arrival_rate / pools; }
    int k_level() const { return static_cast<int>(std::floor(lambda())); }
    double excess() const { return lambda() - k_level(); } // f
    double excess_n() const { return arrival_rate - static_cast<double>(k_level()) * pools; } // f(N)

    void require_valid() const {
        if (pools < 1) throw std::invalid_argument("need at least one pool");
        if (!(arrival_rate > 0)) throw std::invalid_argument("arrival rate must be positive");
        if (buffer && *buffer < 1) throw std::invalid_argument("buffer must be positive");
    }
};

// A sample-size or window-width schedule evaluated at the system scale N,
// e.g. d(N) = ceil(sqrt(N)) or n(N) = 16.
struct GrowthSpec {
    enum class Kind { constant, log_n, sqrt_n, sqrt_n_log_n, linear, table };

    Kind kind = Kind::constant;
    double coeff = 1.0; // the value itself for `constant`, a multiplier otherwise
    std::vector<std::pair<long long, double>> table;

    static GrowthSpec constant(double c) { return GrowthSpec{Kind::constant, c, {}}; }

    double raw(long long n) const {
        double x = static_cast<double>(n);
        switch (kind) {
            case Kind::constant: return coeff;
            case Kind::log_n: return coeff * std::log(x);
            case Kind::sqrt_n: return coeff * std::sqrt(x);
            case Kind::sqrt_n_log_n: return coeff * std::sqrt(x) * std::log(x);
            case Kind::linear: return coeff * x;
            case Kind::table:
                for (auto& [key, v] : table)
                    if (key == n) return v;
                throw std::invalid_argument("growth table has no entry for N=" + std::to_string(n));
        }
        throw std::logic_error("unreachable");
    }

    // Sample size d(N), clamped to [1, N].
    int eval_d(long long n) const {
        double v = std::ceil(raw(n));
        v = std::max(1.0, std::min(v, static_cast<double>(n)));
        return static_cast<int>(v);
    }

    // Window width n(N), clamped to [0, N-1].
    int eval_n(long long n) const {
        double v = std::ceil(raw(n));
        v = std::max(0.0, std::min(v, static_cast<double>(n - 1)));
        return static_cast<int>(v);
    }

    bool diverges() const {
        return kind != Kind::constant && kind != Kind::table;
    }

    // Grammar: "<c>" | "log" | "sqrt" | "sqrtlog" | "linear" | "<mult>*<kind>"
    //          | "table:N1=v1;N2=v2;..."
    static GrowthSpec parse(const std::string& text) {
        GrowthSpec g;
        std::string s = trim(text);
        if (s.empty()) throw std::invalid_argument("empty growth spec");
        if (s.rfind("table:", 0) == 0) {
            g.kind = Kind::table;
            for (auto& entry : split(s.substr(6), ';')) {
                auto kv = split(entry, '=');
                if (kv.size() != 2) throw std::invalid_argument("bad growth table entry '" + entry + "'");
                g.table.emplace_back(parse_int(kv[0], "table N"), parse_double(kv[1], "table value"));
            }
            if (g.table.empty()) throw std::invalid_argument("empty growth table");
            return g;
        }
        auto star = s.find('*');
        if (star != std::string::npos) {
            g.coeff = parse_double(s.substr(0, star), "growth multiplier");
            s = trim(s.substr(star + 1));
        }
        if (s == "log") g.kind = Kind::log_n;
        else if (s == "sqrt") g.kind = Kind::sqrt_n;
        else if (s == "sqrtlog") g.kind = Kind::sqrt_n_log_n;
        else if (s == "linear") g.kind = Kind::linear;
        else {
            if (star != std::string::npos)
                throw std::invalid_argument("unknown growth kind '" + s + "'");
            g.kind = Kind::constant;
            g.coeff = parse_double(s, "growth constant");
        }
        return g;
    }

    std::string str() const {
        switch (kind) {
            case Kind::constant: return g17(coeff);
            case Kind::log_n: return coeff == 1.0 ? "log" : g17(coeff) + "*log";
            case Kind::sqrt_n: return coeff == 1.0 ? "sqrt" : g17(coeff) + "*sqrt";
            case Kind::sqrt_n_log_n: return coeff == 1.0 ? "sqrtlog" : g17(coeff) + "*sqrtlog";
            case Kind::linear: return coeff == 1.0 ? "linear" : g17(coeff) + "*linear";
            case Kind::table: {
                std::string out = "table:";
                for (size_t i = 0; i < table.size(); ++i) {
                    if (i) out += ';';
                    out += std::to_string(table[i].first) + "=" + g17(table[i].second);
                }
                return out;
            }
        }
        return "";
    }
};

} // namespace poold
