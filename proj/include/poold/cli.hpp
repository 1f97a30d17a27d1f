#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "analytics.hpp"
#include "coupling.hpp"
#include "engine.hpp"
#include "limits.hpp"
#include "model.hpp"
#include "policies.hpp"

namespace poold::cli {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

// Every run writes a `meta` record next to its CSVs with enough resolved
// parameters to reproduce the outputs byte for byte.
struct Meta {
    std::vector<std::pair<std::string, std::string>> kv;
    void add(const std::string& k, const std::string& v) { kv.emplace_back(k, v); }
    void add(const std::string& k, double v) { add(k, g17(v)); }
    void add(const std::string& k, long long v) { add(k, std::to_string(v)); }
    void write(const fs::path& dir) const {
        std::ofstream os(dir / "meta");
        os << "artifact=poold\nversion=" << kVersion << "\n";
        for (auto& [k, v] : kv) os << k << '=' << v << "\n";
    }
};

struct CommonOpts {
    long long pools = 100;
    std::string buffer = "inf";
    double lambda = 0.0;   // per-pool rate
    double lambda_n = 0.0; // total rate
    std::string service = "infinite";
    std::uint64_t seed = 1;
    std::string out = "poold-out";
    std::string config_path;

    CLI::Option* lambda_opt = nullptr;
    CLI::Option* lambda_n_opt = nullptr;

    void attach(CLI::App* cmd, bool with_rates = true) {
        cmd->add_option("--N", pools, "number of server pools");
        cmd->add_option("--B", buffer, "per-pool task cap, or 'inf'");
        if (with_rates) {
            lambda_opt = cmd->add_option("--lambda", lambda, "arrival rate per pool");
            lambda_n_opt = cmd->add_option("--lambdaN", lambda_n, "total arrival rate lambda(N)");
            lambda_opt->excludes(lambda_n_opt);
            lambda_n_opt->excludes(lambda_opt);
        }
        cmd->add_option("--seed", seed, "master seed");
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--service", service, "service mode: infinite|single");
        // consumed before parsing (see expand_config); registered for --help
        cmd->add_option("--config", config_path, "flat key=value config; flags override");
    }

    std::optional<int> parse_buffer() const {
        if (trim(buffer) == "inf") return std::nullopt;
        long long b = parse_int(buffer, "buffer");
        if (b < 1) throw CLI::ValidationError("--B must be positive or 'inf'");
        return static_cast<int>(b);
    }

    SystemParams params() const {
        if ((lambda_opt->count() == 0) == (lambda_n_opt->count() == 0))
            throw CLI::ValidationError("give exactly one of --lambda / --lambdaN");
        SystemParams p;
        p.pools = static_cast<int>(pools);
        p.buffer = parse_buffer();
        p.arrival_rate = lambda_opt->count() ? lambda * pools : lambda_n;
        p.service = parse_service_mode(service);
        p.require_valid();
        return p;
    }

    void describe(Meta& m, const SystemParams& p) const {
        m.add("N", static_cast<long long>(p.pools));
        m.add("B", p.buffer ? std::to_string(*p.buffer) : std::string("inf"));
        m.add("lambdaN", p.arrival_rate);
        m.add("lambda", p.lambda());
        m.add("K", static_cast<long long>(p.k_level()));
        m.add("f", p.excess());
        m.add("service", name(p.service));
        m.add("seed", std::to_string(seed));
    }
};

inline OccupancyState initial_state(const std::string& text, const SystemParams& params) {
    auto s = trim(text);
    if (s.empty() || s == "empty") return OccupancyState::empty(params.pools, params.buffer);
    if (s == "fixedpoint") {
        FluidState q = fluid_fixed_point(params.lambda(), params.buffer);
        OccupancyState st = OccupancyState::empty(params.pools, params.buffer);
        for (int i = 1; i <= q.levels(); ++i)
            st.counts.push_back(static_cast<int>(std::lround(q.at(i) * params.pools)));
        st.trim();
        st.require_valid();
        return st;
    }
    OccupancyState st = OccupancyState::from_record(s);
    return st;
}

inline std::uint64_t derived_seed(std::uint64_t master, std::uint64_t idx) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (idx + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateCmd {
    CommonOpts common;
    std::string policy = "jsq";
    std::string q0 = "empty";
    double horizon = 10.0;
    double warmup = 0.2;
    int batches = 20;
    int stride = 1;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("simulate", "single-system run: trajectory + steady state");
        common.attach(cmd);
        cmd->add_option("--policy", policy, PolicySpec::grammar());
        cmd->add_option("--q0", q0, "initial state: empty|fixedpoint|record");
        cmd->add_option("--T", horizon, "run time");
        cmd->add_option("--warmup", warmup, "warm-up fraction for steady-state averages");
        cmd->add_option("--batches", batches, "batch count for confidence intervals");
        cmd->add_option("--stride", stride, "write every stride-th trajectory event");
        cmd->callback([this]() { run(); });
    }

    void run() {
        SystemParams params = common.params();
        PolicySpec spec = PolicySpec::parse(policy);
        OccupancyState start = initial_state(q0, params);
        fs::create_directories(common.out);

        Trajectory traj = simulate(params, spec, horizon, start, common.seed);
        {
            std::ofstream os(fs::path(common.out) / "trajectory.csv");
            trajectory_csv(traj, os, stride);
        }
        SteadyStateReport rep = steady_state(params, spec, horizon, warmup, batches, common.seed);
        {
            std::ofstream os(fs::path(common.out) / "steady.csv");
            steady_csv(rep, os);
        }
        Meta meta;
        meta.add("command", "simulate");
        common.describe(meta, params);
        meta.add("policy", spec.str());
        meta.add("q0", start.record());
        meta.add("T", horizon);
        meta.add("warmup", warmup);
        meta.add("batches", static_cast<long long>(batches));
        meta.add("stride", static_cast<long long>(stride));
        meta.add("events", static_cast<long long>(traj.events.size()));
        meta.add("loss", rep.loss);
        meta.write(common.out);
    }
};

// ---------------------------------------------------------------------------
// couple
// ---------------------------------------------------------------------------

struct CoupleCmd {
    CommonOpts common;
    std::string policy_a = "jsq";
    std::string policy_b = "jsq";
    std::string q0a = "empty", q0b = "empty";
    std::string g_scale = "sqrt";
    double horizon = 10.0;
    int stride = 1;
    bool failed = false;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("couple", "paired run of two policies on one sample space");
        common.attach(cmd);
        cmd->add_option("--policyA", policy_a, PolicySpec::grammar());
        cmd->add_option("--policyB", policy_b, PolicySpec::grammar());
        cmd->add_option("--q0A", q0a, "initial state of system A");
        cmd->add_option("--q0B", q0b, "initial state of system B");
        cmd->add_option("--T", horizon, "run time");
        cmd->add_option("--g", g_scale, "alikeness scale g(N)");
        cmd->add_option("--stride", stride, "write every stride-th coupled event");
        cmd->callback([this]() { run(); });
    }

    void run() {
        SystemParams params = common.params();
        PolicySpec spec_a = PolicySpec::parse(policy_a);
        PolicySpec spec_b = PolicySpec::parse(policy_b);
        OccupancyState start_a = initial_state(q0a, params);
        OccupancyState start_b = initial_state(q0b, params);
        fs::create_directories(common.out);

        CoupledTrace trace = simulate_coupled(params, spec_a, spec_b, horizon, start_a, start_b,
                                              common.seed);
        {
            std::ofstream os(fs::path(common.out) / "coupled.csv");
            coupled_csv(trace, os, stride);
        }
        GrowthSpec g = GrowthSpec::parse(g_scale);
        double g_val = std::max(1.0, g.raw(params.pools));
        AlikenessGap gap;
        bool have_gap = !trace.events.empty();
        if (have_gap) gap = delta_and_gap(trace, g_val);

        const CoupleChecks& ck = trace.checks;
        {
            std::ofstream os(fs::path(common.out) / "checks.csv");
            os << "check,value\n";
            os << "two_delta_margin," << ck.two_delta_margin << "\n";
            os << "sandwich_checked," << (ck.sandwich_checked ? 1 : 0) << "\n";
            if (ck.sandwich_checked) {
                os << "sandwich_n," << ck.sandwich_n << "\n";
                for (size_t k = 0; k < ck.sandwich_lower.size(); ++k)
                    os << "sandwich_lower_margin_k" << k + 1 << ',' << ck.sandwich_lower[k] << "\n";
                for (size_t k = 0; k < ck.sandwich_upper.size(); ++k)
                    os << "sandwich_upper_margin_k" << k + 1 << ',' << ck.sandwich_upper[k] << "\n";
            }
            os << "delta_T," << ck.delta << "\n";
            os << "arrivals," << ck.arrivals << "\n";
            os << "events," << ck.events << "\n";
            os << "sup_sum_abs_diff," << ck.sup_sum_abs_diff << "\n";
            os << "identical_paths," << (ck.identical_paths ? 1 : 0) << "\n";
            os << "g," << g17(g_val) << "\n";
            if (have_gap) {
                os << "alike_sum_over_g," << g17(gap.sum_over_g) << "\n";
                for (size_t i = 0; i < gap.per_level.size(); ++i)
                    os << "alike_level_" << i + 1 << ',' << g17(gap.per_level[i]) << "\n";
                os << "two_delta_ok," << (gap.two_delta_ok ? 1 : 0) << "\n";
            }
        }
        Meta meta;
        meta.add("command", "couple");
        common.describe(meta, params);
        meta.add("policyA", spec_a.str());
        meta.add("policyB", spec_b.str());
        meta.add("q0A", start_a.record());
        meta.add("q0B", start_b.record());
        meta.add("T", horizon);
        meta.add("g", g_scale);
        meta.add("stride", static_cast<long long>(stride));
        meta.write(common.out);

        failed = !ck.all_hold() || (have_gap && !gap.two_delta_ok);
        if (failed)
            std::cerr << "couple: a pathwise inequality check failed (see checks.csv)\n";
    }
};

// ---------------------------------------------------------------------------
// limits
// ---------------------------------------------------------------------------

struct LimitsCmd {
    CommonOpts common;
    std::string mode = "fluid";
    std::string q0 = "empty";
    double lambda = 1.0;
    double horizon = 30.0;
    double step = 1e-3;
    double x0 = 0.0;
    double z1 = 0.0, z2 = 0.0;
    int k_level = 1;
    double beta = 0.0;
    bool no_noise = false;
    int higher = 0;
    std::string input;
    std::string regime = "fpos";
    int stride = 1;
    CLI::Option* lambda_only = nullptr;
    CLI::Option* k_opt = nullptr;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("limits", "fluid ODE and limiting diffusions");
        common.attach(cmd, /*with_rates=*/false);
        cmd->add_option("--mode", mode, "fluid|ou|reflected|scale")->required();
        lambda_only = cmd->add_option("--lambda", lambda, "normalized arrival rate");
        cmd->add_option("--lambdaN", common.lambda_n, "total arrival rate (scale mode)");
        cmd->add_option("--q0", q0, "fluid start: empty|fixedpoint|comma-separated q values");
        cmd->add_option("--T", horizon, "horizon");
        cmd->add_option("--step", step, "grid step");
        cmd->add_option("--x0", x0, "OU start");
        cmd->add_option("--z1", z1, "reflected start, first coordinate");
        cmd->add_option("--z2", z2, "reflected start, second coordinate");
        k_opt = cmd->add_option("--K", k_level, "integer rate level K");
        cmd->add_option("--beta", beta, "slack parameter");
        cmd->add_flag("--no-noise", no_noise, "drive with zero Gaussian increments");
        cmd->add_option("--higher", higher, "number of deterministic higher levels");
        cmd->add_option("--in", input, "trajectory.csv to rescale (scale mode)");
        cmd->add_option("--regime", regime, "fpos|fzero (scale mode)");
        cmd->add_option("--stride", stride, "write every stride-th grid point");
        cmd->callback([this]() { run(); });
    }

    FluidState parse_q0(std::optional<int> buf) const {
        auto s = trim(q0);
        if (s.empty() || s == "empty") return FluidState{};
        if (s == "fixedpoint") return fluid_fixed_point(lambda, buf);
        FluidState q;
        for (auto& part : split(s, ',')) q.q.push_back(parse_double(part, "q0 entry"));
        if (!q.valid()) throw CLI::ValidationError("--q0 is not a valid fluid state");
        return q;
    }

    void run() {
        fs::create_directories(common.out);
        Meta meta;
        meta.add("command", "limits");
        meta.add("mode", mode);
        if (mode == "fluid") {
            auto buf = common.parse_buffer();
            FluidTrajectory traj =
                integrate_fluid(parse_q0(buf), lambda, parse_service_mode(common.service),
                                horizon, step, buf);
            std::ofstream os(fs::path(common.out) / "fluid.csv");
            fluid_csv(traj, os, stride);
            meta.add("lambda", lambda);
            meta.add("B", common.buffer);
            meta.add("T", horizon);
            meta.add("step", step);
            meta.add("q0", q0);
        } else if (mode == "ou") {
            SdePath path = simulate_ou_exact(x0, lambda, horizon, step, common.seed, !no_noise);
            std::ofstream os(fs::path(common.out) / "ou.csv");
            ou_csv(path, os, stride);
            meta.add("lambda", lambda);
            meta.add("x0", x0);
            meta.add("T", horizon);
            meta.add("step", step);
            meta.add("noise", static_cast<long long>(no_noise ? 0 : 1));
            meta.add("seed", std::to_string(common.seed));
        } else if (mode == "reflected") {
            std::vector<double> higher0(std::max(0, higher), 0.0);
            SdePath path = simulate_reflected({z1, z2}, k_level, beta, horizon, step, common.seed,
                                              !no_noise, higher0);
            std::ofstream os(fs::path(common.out) / "reflected.csv");
            reflected_csv(path, os, stride);
            meta.add("K", static_cast<long long>(k_level));
            meta.add("beta", beta);
            meta.add("z1", z1);
            meta.add("z2", z2);
            meta.add("T", horizon);
            meta.add("step", step);
            meta.add("noise", static_cast<long long>(no_noise ? 0 : 1));
            meta.add("seed", std::to_string(common.seed));
        } else if (mode == "scale") {
            if (input.empty()) throw CLI::ValidationError("scale mode needs --in");
            SystemParams params;
            params.pools = static_cast<int>(common.pools);
            params.buffer = common.parse_buffer();
            params.arrival_rate = common.lambda_n;
            params.require_valid();
            Trajectory traj = read_trajectory(input, params);
            DiffusionRegime r = parse_regime(regime);
            std::optional<int> k;
            if (k_opt->count()) k = k_level;
            DiffusionSeries ds = diffusion_scale(traj, r, k);
            std::ofstream os(fs::path(common.out) / "scaled.csv");
            scaled_csv(ds, os, stride);
            meta.add("in", input);
            meta.add("regime", regime);
            meta.add("N", common.pools);
            meta.add("lambdaN", common.lambda_n);
            meta.add("K", static_cast<long long>(ds.k_level));
        } else {
            throw CLI::ValidationError("unknown --mode '" + mode + "'");
        }
        meta.write(common.out);
    }

    static DiffusionRegime parse_regime(const std::string& s) {
        if (s == "fpos") return DiffusionRegime::positive_excess;
        if (s == "fzero") return DiffusionRegime::zero_excess;
        throw CLI::ValidationError("--regime must be fpos or fzero");
    }

    static Trajectory read_trajectory(const std::string& path, const SystemParams& params) {
        std::ifstream is(path);
        if (!is) throw CLI::ValidationError("cannot open " + path);
        std::string line;
        if (!std::getline(is, line)) throw CLI::ValidationError("empty trajectory file");
        Trajectory traj;
        traj.params = params;
        bool first = true;
        while (std::getline(is, line)) {
            if (trim(line).empty()) continue;
            auto f = split(line, ',');
            if (f.size() < 3) throw CLI::ValidationError("short trajectory row");
            double t = parse_double(f[0], "t");
            std::string kind = trim(f[1]);
            int level = static_cast<int>(parse_int(f[2], "level"));
            if (first) {
                if (kind != "init") throw CLI::ValidationError("trajectory must start with init row");
                OccupancyState q0 = OccupancyState::empty(params.pools, params.buffer);
                for (size_t i = 3; i < f.size(); ++i)
                    q0.counts.push_back(static_cast<int>(parse_int(f[i], "Q")));
                q0.trim();
                q0.require_valid();
                traj.initial = q0;
                traj.max_levels = static_cast<int>(f.size()) - 3;
                first = false;
                continue;
            }
            Event e;
            e.t = t;
            e.level = level;
            if (kind == "arrival") e.kind = EventKind::arrival;
            else if (kind == "overflow") e.kind = EventKind::overflow;
            else if (kind == "departure") e.kind = EventKind::departure;
            else throw CLI::ValidationError("unknown event kind '" + kind + "'");
            traj.events.push_back(e);
        }
        if (first) throw CLI::ValidationError("trajectory has no init row");
        return traj;
    }
};

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

struct LossCmd {
    CommonOpts common;
    std::string policy = "jsqd:d=sqrtlog";
    std::string n_spec = "";
    double horizon = 200.0;
    double warmup = 0.1;
    int batches = 20;
    double beta = 0.0;
    bool literal_p = false;
    CLI::Option* beta_opt = nullptr;
    bool failed = false;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("loss", "empirical loss with Erlang bounds and asymptote");
        common.attach(cmd);
        cmd->add_option("--policy", policy, PolicySpec::grammar());
        cmd->add_option("--n", n_spec, "window width for the modified-system bound");
        cmd->add_option("--T", horizon, "run time");
        cmd->add_option("--warmup", warmup, "warm-up fraction");
        cmd->add_option("--batches", batches, "batch count");
        beta_opt = cmd->add_option("--beta", beta, "slack parameter (default (BN-lambdaN)/sqrt(N))");
        cmd->add_flag("--literal-p", literal_p, "feed the rejected fraction as admitted load");
        cmd->callback([this]() { run(); });
    }

    void run() {
        SystemParams params = common.params();
        if (!params.buffer) throw CLI::ValidationError("loss needs a finite --B");
        PolicySpec spec = PolicySpec::parse(policy);
        fs::create_directories(common.out);

        int d = spec.kind == PolicyKind::jsq_d || spec.kind == PolicyKind::jsq_n_d
                    ? spec.d.eval_d(params.pools)
                    : params.pools;
        long long n;
        if (!trim(n_spec).empty()) {
            n = GrowthSpec::parse(n_spec).eval_n(params.pools);
        } else {
            auto rep = alikeness_criteria(params.pools, GrowthSpec::parse("sqrt"),
                                          GrowthSpec::constant(d));
            n = rep.suggested_n;
        }
        double b = beta_opt->count()
                       ? beta
                       : halfin_whitt_beta(params.pools, *params.buffer, params.arrival_rate);

        SteadyStateReport rep = steady_state(params, spec, horizon, warmup, batches, common.seed);
        LossBounds bounds = loss_bounds(params, n, d, literal_p);
        double asym = asymptotic_scaled_loss(*params.buffer, b);
        double sqrt_n = std::sqrt(static_cast<double>(params.pools));

        {
            std::ofstream os(fs::path(common.out) / "loss.csv");
            os << "N,B,lambdaN,d,n,beta,loss_emp,lower,upper,asymptotic,sqrtN_loss\n";
            os << params.pools << ',' << *params.buffer << ',' << g17(params.arrival_rate) << ','
               << d << ',' << n << ',' << g17(b) << ',' << g17(rep.loss) << ','
               << g17(bounds.lower) << ',' << g17(bounds.upper) << ',' << g17(asym) << ','
               << g17(sqrt_n * rep.loss) << "\n";
        }
        Meta meta;
        meta.add("command", "loss");
        common.describe(meta, params);
        meta.add("policy", spec.str());
        meta.add("d", static_cast<long long>(d));
        meta.add("n", n);
        meta.add("beta", b);
        meta.add("T", horizon);
        meta.add("warmup", warmup);
        meta.add("batches", static_cast<long long>(batches));
        meta.add("loss", rep.loss);
        meta.add("loss_ci_half", rep.loss_ci_half);
        meta.write(common.out);

        failed = bounds.lower > rep.loss + rep.loss_ci_half ||
                 rep.loss - rep.loss_ci_half > bounds.upper;
        if (failed)
            std::cerr << "loss: empirical loss is not bracketed by the Erlang bounds\n";
    }
};

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepCmd {
    CommonOpts common;
    std::string metric = "fixedpoint";
    std::string n_grid, d_grid;
    std::string policy = "jsqd:d=sqrt";
    std::string g_scale = "sqrt";
    double horizon = 20.0;
    double warmup = 0.2;
    int batches = 10;
    int k_level = 0;
    int workers = 0;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("sweep", "grid of runs, one metric per row");
        common.attach(cmd);
        cmd->add_option("--metric", metric, "fixedpoint|alike|loss|gap");
        cmd->add_option("--N-grid", n_grid, "semicolon-separated pool counts");
        cmd->add_option("--d-grid", d_grid, "semicolon-separated growth specs for d");
        cmd->add_option("--policy", policy, PolicySpec::grammar());
        cmd->add_option("--g", g_scale, "alikeness scale g(N)");
        cmd->add_option("--T", horizon, "run time per grid point");
        cmd->add_option("--warmup", warmup, "warm-up fraction");
        cmd->add_option("--batches", batches, "batch count");
        cmd->add_option("--K", k_level, "level K for the gap metric (default: round(lambda))");
        cmd->add_option("--workers", workers, "parallel grid workers (default env POOLD_SIM_WORKERS)");
        cmd->callback([this]() { run(); });
    }

    struct Point {
        long long pools;
        PolicySpec spec;
        std::uint64_t seed;
    };

    double evaluate(const Point& pt) const {
        SystemParams params;
        params.pools = static_cast<int>(pt.pools);
        params.buffer = common.parse_buffer();
        params.arrival_rate =
            common.lambda_opt->count() ? common.lambda * pt.pools : common.lambda_n;
        params.service = parse_service_mode(common.service);
        params.require_valid();
        if (metric == "fixedpoint") {
            SteadyStateReport rep =
                steady_state(params, pt.spec, horizon, warmup, batches, pt.seed);
            FluidState qhat{rep.q_hat};
            return fluid_distance(qhat, fluid_fixed_point(params.lambda(), params.buffer));
        }
        if (metric == "alike") {
            OccupancyState start = OccupancyState::empty(params.pools, params.buffer);
            CoupledTrace trace = simulate_coupled(params, PolicySpec{}, pt.spec, horizon, start,
                                                  start, pt.seed, /*keep_events=*/false);
            double g = std::max(1.0, GrowthSpec::parse(g_scale).raw(pt.pools));
            long long sup = 0;
            for (long long v : trace.checks.sup_abs_diff) sup = std::max(sup, v);
            return double(sup) / g;
        }
        if (metric == "loss") {
            SteadyStateReport rep =
                steady_state(params, pt.spec, horizon, warmup, batches, pt.seed);
            return std::sqrt(double(params.pools)) * rep.loss;
        }
        if (metric == "gap") {
            int k = k_level > 0 ? k_level : static_cast<int>(std::lround(params.lambda()));
            OccupancyState start = OccupancyState::empty(params.pools, params.buffer);
            // start with K levels nearly full so the prefix gap begins on scale
            long long y = static_cast<long long>(std::lround(params.arrival_rate));
            for (int i = 1; i <= k; ++i)
                start.counts.push_back(static_cast<int>(std::min<long long>(params.pools, y / k)));
            std::sort(start.counts.begin(), start.counts.end(), std::greater<int>());
            start.trim();
            Trajectory traj = simulate(params, pt.spec, horizon, start, pt.seed);
            long long sup = 0;
            replay(traj, [&](double, const Event&, const OccupancyState& s) {
                long long z1 = 0;
                for (int i = 1; i <= k; ++i) z1 += s.pools - s.q(i);
                sup = std::max(sup, z1);
            });
            return sup / std::sqrt(static_cast<double>(pt.pools));
        }
        throw CLI::ValidationError("unknown --metric '" + metric + "'");
    }

    void run() {
        if (n_grid.empty() == d_grid.empty())
            throw CLI::ValidationError("give exactly one of --N-grid / --d-grid (nonempty)");
        std::vector<Point> grid;
        if (!n_grid.empty()) {
            PolicySpec spec = PolicySpec::parse(policy);
            for (auto& tok : split(n_grid, ';'))
                grid.push_back({parse_int(tok, "N grid entry"), spec, 0});
        } else {
            for (auto& tok : split(d_grid, ';')) {
                PolicySpec spec;
                spec.kind = PolicyKind::jsq_d;
                spec.d = GrowthSpec::parse(trim(tok));
                grid.push_back({common.pools, spec, 0});
            }
        }
        if (grid.empty()) throw CLI::ValidationError("empty grid");
        for (size_t i = 0; i < grid.size(); ++i) grid[i].seed = derived_seed(common.seed, i);

        int n_workers = workers;
        if (n_workers <= 0) {
            const char* env = std::getenv("POOLD_SIM_WORKERS");
            n_workers = env ? static_cast<int>(parse_int(env, "POOLD_SIM_WORKERS")) : 1;
        }
        n_workers = std::max(1, std::min<int>(n_workers, static_cast<int>(grid.size())));

        std::vector<double> values(grid.size());
        std::vector<std::string> errors(grid.size());
        {
            std::atomic<size_t> next{0};
            auto worker = [&]() {
                while (true) {
                    size_t i = next.fetch_add(1);
                    if (i >= grid.size()) break;
                    try {
                        values[i] = evaluate(grid[i]);
                    } catch (const std::exception& e) {
                        errors[i] = e.what();
                    }
                }
            };
            std::vector<std::thread> pool;
            for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
            worker();
            for (auto& th : pool) th.join();
        }
        for (auto& err : errors)
            if (!err.empty()) throw CLI::ValidationError("grid point failed: " + err);

        fs::create_directories(common.out);
        {
            std::ofstream os(fs::path(common.out) / "sweep.csv");
            os << "N,d,n,metric,value\n";
            for (size_t i = 0; i < grid.size(); ++i) {
                const auto& pt = grid[i];
                bool has_d = pt.spec.kind == PolicyKind::jsq_d || pt.spec.kind == PolicyKind::jsq_n_d;
                bool has_n =
                    pt.spec.kind == PolicyKind::cjsq_uniform || pt.spec.kind == PolicyKind::jsq_n_d;
                os << pt.pools << ',' << (has_d ? pt.spec.d.eval_d(pt.pools) : -1) << ','
                   << (has_n ? pt.spec.n.eval_n(pt.pools) : -1) << ',' << metric << ','
                   << g17(values[i]) << "\n";
            }
        }
        Meta meta;
        meta.add("command", "sweep");
        meta.add("metric", metric);
        meta.add("N", common.pools);
        meta.add("B", common.buffer);
        if (common.lambda_opt->count()) meta.add("lambda", common.lambda);
        if (common.lambda_n_opt->count()) meta.add("lambdaN", common.lambda_n);
        meta.add("N_grid", n_grid);
        meta.add("d_grid", d_grid);
        meta.add("policy", policy);
        meta.add("T", horizon);
        meta.add("seed", std::to_string(common.seed));
        meta.add("workers", static_cast<long long>(n_workers));
        meta.write(common.out);
    }
};

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

// `--config FILE` is resolved here: the file's key=value lines become flags
// injected right after the subcommand name, so explicit command-line flags
// land later and win (every option keeps its last value).
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
    if (args.empty() || args[0].rfind("-", 0) == 0) return args;
    std::vector<std::string> out{args[0]};
    std::vector<std::string> tail;
    std::string cfg;
    for (size_t i = 1; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--config") {
            if (i + 1 >= args.size()) throw std::invalid_argument("--config needs a file");
            cfg = args[++i];
        } else if (a.rfind("--config=", 0) == 0) {
            cfg = a.substr(9);
        } else {
            tail.push_back(a);
        }
    }
    if (!cfg.empty()) {
        std::ifstream is(cfg);
        if (!is) throw std::invalid_argument("cannot open config file '" + cfg + "'");
        std::string line;
        while (std::getline(is, line)) {
            auto s = trim(line);
            if (s.empty() || s[0] == '#') continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config line without '=': " + s);
            out.push_back("--" + trim(s.substr(0, eq)));
            out.push_back(trim(s.substr(eq + 1)));
        }
    }
    out.insert(out.end(), tail.begin(), tail.end());
    return out;
}

inline int run(std::vector<std::string> args) {
    CLI::App app{"poold: power-of-d load balancing over server pools — simulator and limits toolkit"};
    app.require_subcommand(1);
    SimulateCmd sim;
    CoupleCmd couple;
    LimitsCmd limits;
    LossCmd loss;
    SweepCmd sweep;
    sim.attach(app);
    couple.attach(app);
    limits.attach(app);
    loss.attach(app);
    sweep.attach(app);
    for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; }))
        for (auto* opt : sub->get_options())
            opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    try {
        args = expand_config(std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    if (couple.failed || loss.failed) return 2;
    return 0;
}

} // namespace poold::cli
