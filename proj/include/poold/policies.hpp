#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "model.hpp"

namespace poold {

// Assignment rules. Every rule resolves to an ordered pool rank; the engine
// turns the rank into a level increment on the occupancy state, so individual
// pool identities never need to be tracked.
enum class PolicyKind { jsq, jsq_d, cjsq_uniform, jsq_n_d, random_pool };

struct PolicySpec {
    PolicyKind kind = PolicyKind::jsq;
    GrowthSpec d;                 // sample size for jsq_d / jsq_n_d
    GrowthSpec n;                 // window width for cjsq_uniform / jsq_n_d
    bool with_replacement = true; // sampling mode for jsq_d / jsq_n_d

    static const char* grammar() {
        return "jsq | jsqd:d=<growth>[,norepl] | cjsq:n=<growth> | "
               "jsqnd:n=<growth>,d=<growth>[,norepl] | random   "
               "(<growth> = number | log | sqrt | sqrtlog | linear | <mult>*<kind> | "
               "table:N=v;N=v)";
    }

    static PolicySpec parse(const std::string& text) {
        PolicySpec p;
        auto bad = [&](const std::string& why) {
            return std::invalid_argument("bad policy '" + text + "': " + why +
                                         "; expected " + grammar());
        };
        auto head = trim(text);
        std::string args;
        auto colon = head.find(':');
        if (colon != std::string::npos) {
            args = head.substr(colon + 1);
            head = trim(head.substr(0, colon));
        }
        bool has_d = false, has_n = false;
        if (!args.empty()) {
            for (auto& field : split(args, ',')) {
                auto f = trim(field);
                if (f == "norepl") { p.with_replacement = false; continue; }
                if (f == "repl") { p.with_replacement = true; continue; }
                auto eq = f.find('=');
                if (eq == std::string::npos) throw bad("field '" + f + "'");
                auto key = trim(f.substr(0, eq));
                auto val = trim(f.substr(eq + 1));
                if (key == "d") { p.d = GrowthSpec::parse(val); has_d = true; }
                else if (key == "n") { p.n = GrowthSpec::parse(val); has_n = true; }
                else throw bad("unknown key '" + key + "'");
            }
        }
        if (head == "jsq") {
            p.kind = PolicyKind::jsq;
            if (has_d || has_n) throw bad("jsq takes no parameters");
        } else if (head == "jsqd") {
            p.kind = PolicyKind::jsq_d;
            if (!has_d) throw bad("jsqd needs d=");
        } else if (head == "cjsq") {
            p.kind = PolicyKind::cjsq_uniform;
            if (!has_n) throw bad("cjsq needs n=");
        } else if (head == "jsqnd") {
            p.kind = PolicyKind::jsq_n_d;
            if (!has_d || !has_n) throw bad("jsqnd needs n= and d=");
        } else if (head == "random") {
            p.kind = PolicyKind::random_pool;
        } else {
            throw bad("unknown policy '" + head + "'");
        }
        return p;
    }

    std::string str() const {
        switch (kind) {
            case PolicyKind::jsq: return "jsq";
            case PolicyKind::jsq_d:
                return "jsqd:d=" + d.str() + (with_replacement ? "" : ",norepl");
            case PolicyKind::cjsq_uniform: return "cjsq:n=" + n.str();
            case PolicyKind::jsq_n_d:
                return "jsqnd:n=" + n.str() + ",d=" + d.str() +
                       (with_replacement ? "" : ",norepl");
            case PolicyKind::random_pool: return "random";
        }
        return "";
    }
};

// Outcome of one assignment decision. `level` is the task count of the chosen
// pool before joining; with a finite buffer, level == B means the task is
// discarded (overflow).
struct Assignment {
    int rank = 1;
    int level = 0;
    bool overflow = false;
};

inline int uniform_rank(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Minimum of d uniform draws on {1..N}. With replacement this is sampled in
// one shot by inverse transform: P(min >= c) = ((N-c+1)/N)^d. Without
// replacement, Floyd's algorithm yields d distinct ranks in O(d).
inline int sample_min_rank(int pools, int d, bool with_replacement, std::mt19937_64& rng) {
    if (d < 1 || d > pools) throw std::invalid_argument("sample size d out of range");
    if (d == pools && !with_replacement) return 1;
    if (with_replacement) {
        double u = std::generate_canonical<double, 53>(rng);
        double v = std::ceil(pools * std::pow(u, 1.0 / d));
        return pools + 1 - static_cast<int>(std::max(1.0, std::min(v, double(pools))));
    }
    std::unordered_set<int> chosen;
    chosen.reserve(d * 2);
    int best = pools + 1;
    for (int j = pools - d + 1; j <= pools; ++j) {
        int t = uniform_rank(rng, 1, j);
        int pick = chosen.insert(t).second ? t : j;
        if (pick != t) chosen.insert(j);
        best = std::min(best, pick);
    }
    return best;
}

namespace detail {
inline Assignment at_rank(const OccupancyState& s, int rank) {
    Assignment a;
    a.rank = rank;
    a.level = ordered_pool_size(s, rank);
    a.overflow = s.buffer && a.level == *s.buffer;
    return a;
}
} // namespace detail

// Join the pool with the fewest tasks; ties resolved by the lowest rank, so
// the decision is always rank 1.
inline Assignment select_jsq(const OccupancyState& s) {
    return detail::at_rank(s, 1);
}

// Join the least-filled pool among d sampled ones. Since pools are ordered by
// task count, that is simply the smallest sampled rank.
inline Assignment select_jsq_d(const OccupancyState& s, int d, bool with_replacement,
                               std::mt19937_64& rng) {
    return detail::at_rank(s, sample_min_rank(s.pools, d, with_replacement, rng));
}

// Uniform pick among the n+1 lowest ordered pools.
inline Assignment select_cjsq_uniform(const OccupancyState& s, int n, std::mt19937_64& rng) {
    if (n < 0 || n >= s.pools) throw std::invalid_argument("window width n out of range");
    return detail::at_rank(s, uniform_rank(rng, 1, n + 1));
}

// Sample like jsq_d; keep the sampled rank when it lands inside the n+1
// lowest ordered pools, otherwise fall back to a uniform pick among those.
inline Assignment select_jsq_n_d(const OccupancyState& s, int n, int d, bool with_replacement,
                                 std::mt19937_64& rng) {
    if (n < 0 || n >= s.pools) throw std::invalid_argument("window width n out of range");
    int k = sample_min_rank(s.pools, d, with_replacement, rng);
    if (k <= n + 1) return detail::at_rank(s, k);
    return detail::at_rank(s, uniform_rank(rng, 1, n + 1));
}

inline Assignment select_random(const OccupancyState& s, std::mt19937_64& rng) {
    return detail::at_rank(s, uniform_rank(rng, 1, s.pools));
}

inline Assignment select(const PolicySpec& p, const OccupancyState& s, std::mt19937_64& rng) {
    switch (p.kind) {
        case PolicyKind::jsq: return select_jsq(s);
        case PolicyKind::jsq_d:
            return select_jsq_d(s, p.d.eval_d(s.pools), p.with_replacement, rng);
        case PolicyKind::cjsq_uniform:
            return select_cjsq_uniform(s, p.n.eval_n(s.pools), rng);
        case PolicyKind::jsq_n_d:
            return select_jsq_n_d(s, p.n.eval_n(s.pools), p.d.eval_d(s.pools),
                                  p.with_replacement, rng);
        case PolicyKind::random_pool: return select_random(s, rng);
    }
    throw std::logic_error("unreachable");
}

// Exact decision law over ordered ranks 1..N, used by the generator oracle.
inline std::vector<double> rank_law(const PolicySpec& p, int pools) {
    std::vector<double> law(pools, 0.0);
    auto min_rank_law = [&](int d, bool wr) {
        std::vector<double> out(pools, 0.0);
        if (wr) {
            auto tail = [&](int c) { // P(min >= c)
                return std::pow(double(pools - c + 1) / pools, d);
            };
            for (int c = 1; c <= pools; ++c) out[c - 1] = tail(c) - tail(c + 1);
        } else {
            auto tail = [&](int c) {
                double t = 1.0;
                for (int j = 0; j < d; ++j) {
                    double num = pools - c + 1 - j;
                    if (num <= 0) return 0.0;
                    t *= num / (pools - j);
                }
                return t;
            };
            for (int c = 1; c <= pools; ++c) out[c - 1] = tail(c) - tail(c + 1);
        }
        return out;
    };
    switch (p.kind) {
        case PolicyKind::jsq:
            law[0] = 1.0;
            break;
        case PolicyKind::jsq_d:
            law = min_rank_law(p.d.eval_d(pools), p.with_replacement);
            break;
        case PolicyKind::cjsq_uniform: {
            int n = p.n.eval_n(pools);
            for (int c = 1; c <= n + 1; ++c) law[c - 1] = 1.0 / (n + 1);
            break;
        }
        case PolicyKind::jsq_n_d: {
            int n = p.n.eval_n(pools);
            law = min_rank_law(p.d.eval_d(pools), p.with_replacement);
            double miss = 0.0;
            for (int c = n + 2; c <= pools; ++c) {
                miss += law[c - 1];
                law[c - 1] = 0.0;
            }
            for (int c = 1; c <= n + 1; ++c) law[c - 1] += miss / (n + 1);
            break;
        }
        case PolicyKind::random_pool:
            for (auto& v : law) v = 1.0 / pools;
            break;
    }
    return law;
}

} // namespace poold
