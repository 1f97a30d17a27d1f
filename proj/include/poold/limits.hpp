#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "engine.hpp"
#include "model.hpp"

namespace poold {

// ---------------------------------------------------------------------------
// Fluid ODE
// ---------------------------------------------------------------------------

// dq_i/dt = lambda * p_{i-1}(q) - mu_i(q) on the stored levels.
inline std::vector<double> fluid_rhs(const FluidState& s, double lambda, ServiceMode mode) {
    std::vector<double> p = assignment_fractions(s, lambda, mode);
    std::vector<double> rhs(s.levels(), 0.0);
    for (int i = 1; i <= s.levels(); ++i) {
        double inflow = (i - 1) < static_cast<int>(p.size()) ? lambda * p[i - 1] : 0.0;
        rhs[i - 1] = inflow - fluid_rate(s, i, mode);
    }
    return rhs;
}

struct FluidTrajectory {
    std::vector<double> times;
    std::vector<FluidState> states;
    double step = 0.0;
};

// Explicit Euler with the switching level m(q) recomputed every step and a
// projection back onto the state space (clamp to [0,1], then a downward
// monotonicity sweep). The right-hand side is discontinuous across the
// m(q)-switching surfaces, so a higher-order scheme would not gain its formal
// order here.
inline FluidTrajectory integrate_fluid(const FluidState& q0, double lambda, ServiceMode mode,
                                       double horizon, double step,
                                       std::optional<int> buffer = std::nullopt) {
    if (step <= 0) throw std::invalid_argument("step must be positive");
    if (lambda <= 0) throw std::invalid_argument("lambda must be positive");
    if (buffer && q0.levels() > *buffer)
        throw std::invalid_argument("initial fluid state exceeds buffer");
    FluidTrajectory traj;
    traj.step = step;
    FluidState q = q0;
    if (buffer) q.q.resize(*buffer, 0.0);
    double t = 0.0;
    traj.times.push_back(t);
    traj.states.push_back(q);
    long long n_steps = static_cast<long long>(std::ceil(horizon / step));
    for (long long k = 0; k < n_steps; ++k) {
        double h = std::min(step, horizon - t);
        if (h <= 0) break;
        if (!buffer) {
            // open-ended buffer: keep one empty level ahead of the mass
            while (q.levels() == 0 || q.q.back() > 1e-12 || m_of_q(q) == q.levels())
                q.q.push_back(0.0);
        }
        std::vector<double> rhs = fluid_rhs(q, lambda, mode);
        for (int i = 0; i < q.levels(); ++i) q.q[i] += h * rhs[i];
        double prev = 1.0;
        for (int i = 0; i < q.levels(); ++i) {
            q.q[i] = std::min(std::max(q.q[i], 0.0), prev);
            prev = q.q[i];
        }
        t += h;
        traj.times.push_back(t);
        traj.states.push_back(q);
    }
    return traj;
}

// q* = (1,...,1,f,0,...): K ones then the fractional part, total mass lambda.
inline FluidState fluid_fixed_point(double lambda, std::optional<int> buffer) {
    if (lambda <= 0) throw std::invalid_argument("lambda must be positive");
    if (buffer && lambda > *buffer)
        throw std::invalid_argument("fixed point needs lambda <= buffer");
    int k = static_cast<int>(std::floor(lambda));
    double f = lambda - k;
    int len = buffer ? *buffer : (f > 0 ? k + 1 : k);
    FluidState q;
    q.q.assign(len, 0.0);
    for (int i = 0; i < k && i < len; ++i) q.q[i] = 1.0;
    if (f > 0 && k < len) q.q[k] = f;
    return q;
}

// ---------------------------------------------------------------------------
// Limiting stochastic processes
// ---------------------------------------------------------------------------

struct SdePath {
    std::vector<double> times;
    std::vector<std::vector<double>> values; // state vector per grid point
    std::vector<double> v1;                  // regulator; empty when absent
};

// dX = -X dt + sqrt(2 lambda) dW sampled by its exact Gaussian transition:
// X_{t+h} = X_t e^{-h} + sqrt(lambda (1 - e^{-2h})) Z. Stationary law N(0, lambda).
inline SdePath simulate_ou_exact(double x0, double lambda, double horizon, double step,
                                 std::uint64_t seed, bool noise = true) {
    if (step <= 0) throw std::invalid_argument("step must be positive");
    if (lambda <= 0) throw std::invalid_argument("lambda must be positive");
    SdePath path;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double decay = std::exp(-step);
    double sd = std::sqrt(lambda * (1.0 - std::exp(-2.0 * step)));
    double x = x0, t = 0.0;
    path.times.push_back(t);
    path.values.push_back({x});
    long long n_steps = static_cast<long long>(std::round(horizon / step));
    for (long long k = 0; k < n_steps; ++k) {
        x = x * decay + (noise ? sd * gauss(rng) : 0.0);
        t = (k + 1) * step;
        path.times.push_back(t);
        path.values.push_back({x});
    }
    return path;
}

// Two-dimensional reflected system
//   d z1 = (beta - z1 - K z2) dt + sqrt(2K) dW + dV1
//   d z2 = dV1 - (K+1)(z2 - h_{K+2}) dt
// with V1 the nondecreasing regulator keeping z1 >= 0 (Skorokhod reflection:
// V1 grows only when the unconstrained step would push z1 below zero).
// Optional higher coordinates follow d h_i = -i (h_i - h_{i+1}) dt with the
// last one closed by zero.
inline SdePath simulate_reflected(std::pair<double, double> z0, int k_level, double beta,
                                  double horizon, double step, std::uint64_t seed,
                                  bool noise = true, const std::vector<double>& higher0 = {}) {
    if (step <= 0) throw std::invalid_argument("step must be positive");
    if (k_level < 1) throw std::invalid_argument("K must be positive");
    if (z0.first < 0) throw std::invalid_argument("zeta1 must start nonnegative");
    SdePath path;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double z1 = z0.first, z2 = z0.second, v1 = 0.0, t = 0.0;
    std::vector<double> higher = higher0;
    double diff = std::sqrt(2.0 * k_level * step);
    auto record = [&]() {
        std::vector<double> row{z1, z2};
        row.insert(row.end(), higher.begin(), higher.end());
        path.times.push_back(t);
        path.values.push_back(std::move(row));
        path.v1.push_back(v1);
    };
    record();
    long long n_steps = static_cast<long long>(std::round(horizon / step));
    for (long long s = 0; s < n_steps; ++s) {
        double w = noise ? diff * gauss(rng) : 0.0;
        double free1 = z1 + (beta - z1 - k_level * z2) * step + w;
        double dv1 = free1 < 0 ? -free1 : 0.0;
        double next1 = free1 < 0 ? 0.0 : free1;
        double h_next = higher.empty() ? 0.0 : higher.front();
        double next2 = z2 + dv1 - (k_level + 1) * (z2 - h_next) * step;
        for (size_t i = 0; i < higher.size(); ++i) {
            int lvl = k_level + 2 + static_cast<int>(i);
            double below = i + 1 < higher.size() ? higher[i + 1] : 0.0;
            higher[i] -= lvl * (higher[i] - below) * step;
        }
        z1 = next1;
        z2 = next2;
        v1 += dv1;
        t = (s + 1) * step;
        record();
    }
    return path;
}

// ---------------------------------------------------------------------------
// Centering/scaling maps from raw trajectories to diffusion coordinates
// ---------------------------------------------------------------------------

enum class DiffusionRegime { positive_excess, zero_excess }; // f > 0 | f = 0

// Per-snapshot observables. In the positive-excess regime the scaled columns
// are (N-Q_i)/sqrt(N) for i <= K, (Q_{K+1}-f(N))/sqrt(N), and raw Q_i above.
// In the zero-excess regime they are the aggregated (sum_{i<K}(N-Q_i))/sqrt(N),
// (N-Q_K)/sqrt(N), and Q_i/sqrt(N) from level K+1 up. Either way the series
// Y, D+ = sum_{i<=K}(N-Q_i), D- = sum_{i>=K+2} Q_i, Z1 = D+, Z2 = Q_{K+1} ride
// along, and Y + D+ - D- = Z2 + KN holds exactly on every snapshot (with the
// buffer at K+1, D- vanishes and this is Y - KN = Z2 - Z1).
struct DiffusionSeries {
    DiffusionRegime regime = DiffusionRegime::positive_excess;
    int k_level = 0;
    double excess_n = 0.0; // f(N)
    std::vector<double> times;
    std::vector<std::vector<double>> scaled;
    std::vector<long long> y, d_plus, d_minus, z1, z2;
};

namespace detail {

inline int diffusion_k(const SystemParams& params, DiffusionRegime regime,
                       std::optional<int> k_override) {
    if (k_override) {
        if (*k_override < 1) throw std::invalid_argument("K must be positive");
        return *k_override;
    }
    double lambda = params.lambda();
    if (regime == DiffusionRegime::positive_excess)
        return static_cast<int>(std::floor(lambda));
    return static_cast<int>(std::lround(lambda));
}

inline std::vector<double> scaled_row(const OccupancyState& s, int k, double excess_n,
                                      DiffusionRegime regime, int width) {
    double rt = std::sqrt(static_cast<double>(s.pools));
    std::vector<double> row;
    row.reserve(width);
    if (regime == DiffusionRegime::positive_excess) {
        for (int i = 1; i <= k; ++i) row.push_back((s.pools - s.q(i)) / rt);
        row.push_back((s.q(k + 1) - excess_n) / rt);
        for (int i = k + 2; i <= width; ++i) row.push_back(static_cast<double>(s.q(i)));
    } else {
        long long agg = 0;
        for (int i = 1; i <= k - 1; ++i) agg += s.pools - s.q(i);
        row.push_back(agg / rt);                    // hat Q_{K-1}, aggregated
        row.push_back((s.pools - s.q(k)) / rt);     // hat Q_K
        for (int i = k + 1; i <= width; ++i) row.push_back(s.q(i) / rt);
    }
    return row;
}

} // namespace detail

inline DiffusionSeries diffusion_scale(const Trajectory& traj, DiffusionRegime regime,
                                       std::optional<int> k_override = std::nullopt) {
    const SystemParams& params = traj.params;
    int k = detail::diffusion_k(params, regime, k_override);
    double f_n = params.arrival_rate - static_cast<double>(k) * params.pools;
    if (regime == DiffusionRegime::zero_excess) {
        // arrival rate must sit in a sqrt(N)-window of an integer multiple of N
        if (std::abs(f_n) / params.pools >= 0.1)
            throw std::invalid_argument(
                "zero-excess scaling requested but lambda(N)/N is not near an integer");
    }
    DiffusionSeries out;
    out.regime = regime;
    out.k_level = k;
    out.excess_n = regime == DiffusionRegime::positive_excess ? f_n : 0.0;
    int width = std::max(traj.max_levels, k + 1);
    replay(traj, [&](double t, const Event&, const OccupancyState& s) {
        long long y = s.total_tasks();
        long long dp = 0;
        for (int i = 1; i <= k; ++i) dp += s.pools - s.q(i);
        long long dm = 0;
        for (int i = k + 2; i <= s.levels(); ++i) dm += s.q(i);
        out.times.push_back(t);
        out.scaled.push_back(detail::scaled_row(s, k, out.excess_n, regime, width));
        out.y.push_back(y);
        out.d_plus.push_back(dp);
        out.d_minus.push_back(dm);
        out.z1.push_back(dp);
        out.z2.push_back(s.q(k + 1));
    });
    return out;
}

inline double halfin_whitt_beta(long long pools, int k, double lambda_n) {
    if (pools < 1) throw std::invalid_argument("need at least one pool");
    return (static_cast<double>(k) * pools - lambda_n) / std::sqrt(static_cast<double>(pools));
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

inline void fluid_csv(const FluidTrajectory& traj, std::ostream& os, int stride = 1) {
    if (stride < 1) stride = 1;
    int width = 0;
    for (auto& s : traj.states) width = std::max(width, s.levels());
    os << "t";
    for (int i = 1; i <= width; ++i) os << ",q" << i;
    os << "\n";
    for (size_t r = 0; r < traj.times.size(); ++r) {
        if (r % stride && r + 1 != traj.times.size()) continue;
        os << g17(traj.times[r]);
        for (int i = 1; i <= width; ++i) os << ',' << g17(traj.states[r].at(i));
        os << "\n";
    }
}

inline void ou_csv(const SdePath& path, std::ostream& os, int stride = 1) {
    if (stride < 1) stride = 1;
    os << "t,x\n";
    for (size_t r = 0; r < path.times.size(); ++r) {
        if (r % stride && r + 1 != path.times.size()) continue;
        os << g17(path.times[r]) << ',' << g17(path.values[r][0]) << "\n";
    }
}

inline void reflected_csv(const SdePath& path, std::ostream& os, int stride = 1) {
    if (stride < 1) stride = 1;
    size_t extras = path.values.empty() ? 0 : path.values[0].size() - 2;
    os << "t,zeta1,zeta2,V1";
    for (size_t i = 0; i < extras; ++i) os << ",h" << i + 1;
    os << "\n";
    for (size_t r = 0; r < path.times.size(); ++r) {
        if (r % stride && r + 1 != path.times.size()) continue;
        os << g17(path.times[r]) << ',' << g17(path.values[r][0]) << ','
           << g17(path.values[r][1]) << ',' << g17(path.v1[r]);
        for (size_t i = 2; i < path.values[r].size(); ++i) os << ',' << g17(path.values[r][i]);
        os << "\n";
    }
}

// Long format: `t,level,value,regime`. Level codes are 1..K and K+1 upward as
// scaled; in the zero-excess regime level K-1 carries the aggregated low sum.
inline void scaled_csv(const DiffusionSeries& ds, std::ostream& os, int stride = 1) {
    if (stride < 1) stride = 1;
    const char* regime = ds.regime == DiffusionRegime::positive_excess ? "fpos" : "fzero";
    os << "t,level,value,regime\n";
    for (size_t r = 0; r < ds.times.size(); ++r) {
        if (r % stride && r + 1 != ds.times.size()) continue;
        int level = ds.regime == DiffusionRegime::positive_excess ? 1 : ds.k_level - 1;
        for (double v : ds.scaled[r]) {
            os << g17(ds.times[r]) << ',' << level++ << ',' << g17(v) << ',' << regime << "\n";
        }
    }
}

} // namespace poold
