#include <catch2/catch_amalgamated.hpp>

#include <poold/analytics.hpp>
#include <poold/coupling.hpp>

#include <map>

using namespace poold;

namespace {

SystemParams params_n(int pools, std::optional<int> buffer, double rate) {
    SystemParams p;
    p.pools = pools;
    p.buffer = buffer;
    p.arrival_rate = rate;
    return p;
}

} // namespace

TEST_CASE("coloring splits the two states into green, blue and red") {
    SECTION("identical states are all green") {
        auto s = from_pool_sizes({1, 2, 2}, 3);
        auto col = coloring(s, s);
        CHECK(col.total_green == s.total_tasks());
        CHECK(col.total_blue == 0);
        CHECK(col.total_red == 0);
    }
    SECTION("hand-colored example") {
        OccupancyState a, b;
        a.pools = b.pools = 4;
        a.counts = {3, 1};
        b.counts = {2, 2};
        auto col = coloring(a, b);
        CHECK(col.green == std::vector<long long>{2, 1});
        CHECK(col.blue == std::vector<long long>{1, 0});
        CHECK(col.red == std::vector<long long>{0, 1});
        CHECK(col.total_green == 3);
        CHECK(col.max_total() == 4);
    }
    SECTION("empty vs empty") {
        auto e = OccupancyState::empty(3, 2);
        auto col = coloring(e, e);
        CHECK(col.max_total() == 0);
    }
    SECTION("mismatched pool counts are rejected") {
        CHECK_THROWS_AS(coloring(OccupancyState::empty(2, 1), OccupancyState::empty(3, 1)),
                        std::invalid_argument);
    }
}

TEST_CASE("coloring reconstructs both states on random pairs") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        int n = 2 + int(rng() % 6);
        int b = 1 + int(rng() % 4);
        auto rand_state = [&]() {
            std::vector<int> sizes(n);
            for (auto& v : sizes) v = int(rng() % (b + 1));
            return from_pool_sizes(sizes, b);
        };
        auto a = rand_state(), c = rand_state();
        auto col = coloring(a, c);
        for (size_t j = 0; j < col.green.size(); ++j) {
            REQUIRE(col.green[j] + col.blue[j] == a.q(int(j + 1)));
            REQUIRE(col.green[j] + col.red[j] == c.q(int(j + 1)));
        }
    }
}

TEST_CASE("coupled_departure handles the listed edge cases") {
    std::mt19937_64 aux(5);
    SECTION("single green task leaves both systems") {
        CoupledState cs;
        cs.a = from_pool_sizes({1}, 2);
        cs.b = from_pool_sizes({1}, 2);
        auto out = coupled_departure(cs, 0.3, aux);
        CHECK(out.green);
        CHECK(cs.a.total_tasks() == 0);
        CHECK(cs.b.total_tasks() == 0);
    }
    SECTION("blue-only departure leaves the other system untouched") {
        CoupledState cs;
        cs.a = from_pool_sizes({1, 0}, 2);
        cs.b = OccupancyState::empty(2, 2);
        auto out = coupled_departure(cs, 0.99, aux); // colored branch, m = 1
        CHECK(out.level_a == 1);
        CHECK(out.level_b == -1);
        CHECK(cs.a.total_tasks() == 0);
        CHECK(cs.b.total_tasks() == 0);
    }
    SECTION("empty systems are rejected") {
        CoupledState cs;
        cs.a = OccupancyState::empty(2, 2);
        cs.b = OccupancyState::empty(2, 2);
        CHECK_THROWS_AS(coupled_departure(cs, 0.5, aux), std::invalid_argument);
    }
}

TEST_CASE("departures never increase the absolute occupancy gap") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
        int n = 2 + int(rng() % 5);
        int b = 1 + int(rng() % 3);
        auto rand_state = [&]() {
            std::vector<int> sizes(n);
            for (auto& v : sizes) v = int(rng() % (b + 1));
            return from_pool_sizes(sizes, b);
        };
        CoupledState cs;
        cs.a = rand_state();
        cs.b = rand_state();
        if (std::max(cs.a.total_tasks(), cs.b.total_tasks()) == 0) continue;
        long long before = sum_abs_diff(cs.a, cs.b);
        double u = std::generate_canonical<double, 53>(rng);
        coupled_departure(cs, u, rng);
        REQUIRE(sum_abs_diff(cs.a, cs.b) <= before);
        REQUIRE(cs.a.valid());
        REQUIRE(cs.b.valid());
    }
}

TEST_CASE("identical policies stay glued together") {
    auto p = params_n(20, 3, 30.0);
    auto q0 = OccupancyState::empty(20, 3);
    SECTION("jsq against itself") {
        auto trace = simulate_coupled(p, PolicySpec::parse("jsq"), PolicySpec::parse("jsq"),
                                      100.0, q0, q0, 17);
        CHECK(trace.checks.delta == 0);
        CHECK(trace.checks.identical_paths);
    }
    SECTION("jsq against the degenerate window") {
        auto trace = simulate_coupled(p, PolicySpec::parse("jsq"), PolicySpec::parse("cjsq:n=0"),
                                      100.0, q0, q0, 19);
        CHECK(trace.checks.delta == 0);
        CHECK(trace.checks.identical_paths);
        CHECK(trace.checks.sup_sum_abs_diff == 0);
    }
}

TEST_CASE("differ-in-decision frequency matches the sampling miss probability") {
    // jsqd(d) vs jsqnd(n,d) under shared decision draws
    const int pools = 100, n = 9, d = 20;
    auto p = params_n(pools, 3, 250.0);
    auto q0 = OccupancyState::empty(pools, 3);
    auto spec_a = PolicySpec::parse("jsqd:d=20");
    auto spec_b = PolicySpec::parse("jsqnd:n=9,d=20");
    auto trace = simulate_coupled(p, spec_a, spec_b, 450.0, q0, q0, 23, /*keep_events=*/false);
    REQUIRE(trace.checks.arrivals > 100000);
    double miss = std::pow(1.0 - (n + 1.0) / pools, d);
    double got = double(trace.checks.delta) / trace.checks.arrivals;
    double sd = std::sqrt(miss * (1 - miss) / trace.checks.arrivals);
    CHECK(std::abs(got - miss) <= 3 * sd);
}

TEST_CASE("two-delta bound and sandwich hold pathwise") {
    auto p = params_n(50, 3, 110.0);
    auto q0 = OccupancyState::empty(50, 3);
    for (auto [pa, pb] : std::vector<std::pair<const char*, const char*>>{
             {"jsq", "jsqd:d=4"},
             {"jsq", "cjsq:n=7"},
             {"jsqd:d=12", "jsqnd:n=5,d=12"}}) {
        auto trace = simulate_coupled(p, PolicySpec::parse(pa), PolicySpec::parse(pb), 300.0,
                                      q0, q0, 29, /*keep_events=*/false);
        INFO(pa << " vs " << pb);
        CHECK(trace.checks.two_delta_margin <= 0);
        CHECK(trace.checks.all_hold());
    }
}

TEST_CASE("jsq dominates the window policy on every prefix") {
    auto p = params_n(40, 4, 100.0);
    auto q0 = OccupancyState::empty(40, 4);
    auto trace = simulate_coupled(p, PolicySpec::parse("jsq"), PolicySpec::parse("cjsq:n=6"),
                                  400.0, q0, q0, 31, /*keep_events=*/false);
    REQUIRE(trace.checks.sandwich_checked);
    CHECK(trace.checks.all_hold());
    // per-level gap bound |Q_k^A - Q_k^B| <= k*n
    for (size_t k = 0; k < trace.checks.sup_abs_diff.size(); ++k)
        CHECK(trace.checks.sup_abs_diff[k] <= (long long)(k + 1) * trace.checks.sandwich_n);
}

TEST_CASE("delta_and_gap reports alikeness metrics") {
    auto p = params_n(30, 2, 45.0);
    auto q0 = OccupancyState::empty(30, 2);
    SECTION("identical-policy trace gives zero metrics") {
        auto trace = simulate_coupled(p, PolicySpec::parse("jsq"), PolicySpec::parse("jsq"),
                                      50.0, q0, q0, 37);
        auto gap = delta_and_gap(trace, 10.0);
        CHECK(gap.sum_over_g == 0.0);
        for (double v : gap.per_level) CHECK(v == 0.0);
        CHECK(gap.two_delta_ok);
    }
    SECTION("scaling by twice the final delta caps the summed metric at one") {
        auto trace = simulate_coupled(p, PolicySpec::parse("jsq"), PolicySpec::parse("jsqd:d=2"),
                                      50.0, q0, q0, 41);
        if (trace.checks.delta > 0) {
            auto gap = delta_and_gap(trace, 2.0 * trace.checks.delta);
            CHECK(gap.sum_over_g <= 1.0);
            CHECK(gap.two_delta_ok);
        }
    }
    SECTION("bad scale and empty traces are rejected") {
        auto trace = simulate_coupled(p, PolicySpec::parse("jsq"), PolicySpec::parse("jsq"),
                                      50.0, q0, q0, 43);
        CHECK_THROWS_AS(delta_and_gap(trace, 0.0), std::invalid_argument);
        auto none = simulate_coupled(p, PolicySpec::parse("jsq"), PolicySpec::parse("jsq"),
                                     0.0, q0, q0, 43);
        CHECK_THROWS_AS(delta_and_gap(none, 1.0), std::invalid_argument);
    }
}

TEST_CASE("coupled marginals match the exact stationary law") {
    auto p = params_n(3, 2, 3.0);
    auto q0 = OccupancyState::empty(3, 2);
    auto spec_a = PolicySpec::parse("jsq");
    auto spec_b = PolicySpec::parse("jsqd:d=2");
    auto trace = simulate_coupled(p, spec_a, spec_b, 2.0e5, q0, q0, 47);
    auto solve_a = exact_stationary_small(p, spec_a);
    auto solve_b = exact_stationary_small(p, spec_b);

    double warmup = 100.0;
    std::vector<double> wa(solve_a.states.size(), 0.0), wb(solve_b.states.size(), 0.0);
    OccupancyState a = trace.initial_a, b = trace.initial_b;
    double t_prev = 0.0, total = 0.0;
    for (const auto& ev : trace.events) {
        double lo = std::max(t_prev, warmup);
        if (ev.t > lo) {
            wa[solve_a.index.at(a.record())] += ev.t - lo;
            wb[solve_b.index.at(b.record())] += ev.t - lo;
            total += ev.t - lo;
        }
        if (ev.kind == EventKind::arrival) {
            if (ev.level_a >= 0) a.add_task_at(ev.level_a);
            if (ev.level_b >= 0) b.add_task_at(ev.level_b);
        } else {
            if (ev.level_a >= 0) a.remove_task_at(ev.level_a);
            if (ev.level_b >= 0) b.remove_task_at(ev.level_b);
        }
        t_prev = ev.t;
    }
    double tva = 0, tvb = 0;
    for (size_t i = 0; i < wa.size(); ++i) tva += std::abs(wa[i] / total - solve_a.pi[i]);
    for (size_t i = 0; i < wb.size(); ++i) tvb += std::abs(wb[i] / total - solve_b.pi[i]);
    CHECK(tva / 2 <= 0.01);
    CHECK(tvb / 2 <= 0.01);
}

TEST_CASE("coupled CSV carries the documented header") {
    auto p = params_n(4, 2, 6.0);
    auto q0 = OccupancyState::empty(4, 2);
    auto trace = simulate_coupled(p, PolicySpec::parse("jsq"), PolicySpec::parse("random"),
                                  5.0, q0, q0, 53);
    std::ostringstream os;
    coupled_csv(trace, os);
    CHECK(os.str().rfind("t,kind,rankA,rankB,differ,delta,sumAbsDiff,QA1", 0) == 0);
}

TEST_CASE("mismatched shapes are rejected") {
    auto p = params_n(4, 2, 6.0);
    CHECK_THROWS_AS(simulate_coupled(p, PolicySpec{}, PolicySpec{}, 1.0,
                                     OccupancyState::empty(4, 2), OccupancyState::empty(5, 2),
                                     1),
                    std::invalid_argument);
}
