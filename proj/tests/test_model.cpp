#include <catch2/catch_amalgamated.hpp>

#include <poold/model.hpp>

#include <random>

using namespace poold;

TEST_CASE("from_pool_sizes counts pools at or above each level") {
    SECTION("empty system") {
        auto s = from_pool_sizes({0, 0, 0}, 2);
        CHECK(s.pools == 3);
        CHECK(s.q(1) == 0);
        CHECK(s.q(2) == 0);
        CHECK(s.record() == "3,2,0,0");
    }
    SECTION("staircase of ten pools") {
        auto s = from_pool_sizes({2, 4, 4, 6, 7, 9, 9, 11, 11, 11}, std::nullopt);
        CHECK(s.q(1) == 10);
        CHECK(s.q(2) == 10);
        CHECK(s.q(6) == 7);
        CHECK(s.q(7) == 6);
        CHECK(s.q(11) == 3);
        CHECK(s.q(12) == 0);
    }
    SECTION("hand-counted small state") {
        auto s = from_pool_sizes({1, 1, 2}, 3);
        CHECK(s.counts == std::vector<int>{3, 1});
    }
    SECTION("size above the buffer is rejected") {
        CHECK_THROWS_AS(from_pool_sizes({3}, 2), std::invalid_argument);
    }
}

TEST_CASE("from_pool_sizes round-trips through pool_sizes") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 1 + int(rng() % 6);
        int b = 1 + int(rng() % 4);
        std::vector<int> sizes(n);
        for (auto& v : sizes) v = int(rng() % (b + 1));
        auto s = from_pool_sizes(sizes, b);
        auto back = pool_sizes(s);
        std::sort(sizes.begin(), sizes.end());
        REQUIRE(back == sizes);
        REQUIRE(from_pool_sizes(back, b) == s);
    }
}

TEST_CASE("ordered_pool_size evaluates the rank definition") {
    auto s = from_pool_sizes({1, 1, 2}, 3); // Q = (3,1)
    CHECK(ordered_pool_size(s, 1) == 1);
    CHECK(ordered_pool_size(s, 2) == 1);
    CHECK(ordered_pool_size(s, 3) == 2);
    CHECK_THROWS_AS(ordered_pool_size(s, 0), std::invalid_argument);
    CHECK_THROWS_AS(ordered_pool_size(s, 4), std::invalid_argument);

    auto empty = OccupancyState::empty(5, 2);
    for (int c = 1; c <= 5; ++c) CHECK(ordered_pool_size(empty, c) == 0);

    auto full = from_pool_sizes({3, 3, 3}, 3);
    CHECK(ordered_pool_size(full, 3) == 3);
    CHECK(ordered_pool_size(full, 1) == 3);
}

TEST_CASE("ordered_pool_size is nondecreasing in the rank") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        int n = 1 + int(rng() % 8);
        int b = 1 + int(rng() % 5);
        std::vector<int> sizes(n);
        for (auto& v : sizes) v = int(rng() % (b + 1));
        auto s = from_pool_sizes(sizes, b);
        int prev = 0;
        for (int c = 1; c <= n; ++c) {
            int v = ordered_pool_size(s, c);
            REQUIRE(v >= prev);
            prev = v;
        }
    }
}

TEST_CASE("m_of_q finds the minimum active level") {
    CHECK(m_of_q(FluidState{{0.3, 0, 0}}) == 0);
    CHECK(m_of_q(FluidState{{1, 1, 0.5, 0, 0}}) == 2);
    CHECK(m_of_q(FluidState{{1, 1, 1}}) == 3); // convention q_{B+1} = 0
    CHECK(m_of_q(FluidState{{1.0 - 1e-12, 0.2}}) == 1); // numerically-at-one counts as one
}

TEST_CASE("assignment_fractions splits mass across levels m-1 and m") {
    SECTION("overloaded minimum level") {
        FluidState q{{1, 1, 0.5, 0, 0}};
        auto p = assignment_fractions(q, 2.5, ServiceMode::infinite_server);
        REQUIRE(p.size() >= 3);
        CHECK(p[0] == 0.0);
        CHECK_THAT(p[1], Catch::Matchers::WithinAbs(0.4, 1e-15));
        CHECK_THAT(p[2], Catch::Matchers::WithinAbs(0.6, 1e-15));
    }
    SECTION("empty pools absorb everything") {
        FluidState q{{0.5}};
        auto p = assignment_fractions(q, 2.0, ServiceMode::infinite_server);
        REQUIRE(p.size() == 1);
        CHECK(p[0] == 1.0);
    }
    SECTION("underloaded branch") {
        FluidState q{{1, 0.2, 0}};
        auto p = assignment_fractions(q, 0.5, ServiceMode::infinite_server);
        CHECK(p[0] == 1.0);
        CHECK(p[1] == 0.0);
    }
}

TEST_CASE("assignment_fractions sums to one with two adjacent nonzeros") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        int len = 1 + int(rng() % 5);
        FluidState q;
        double prev = 1.0;
        for (int i = 0; i < len; ++i) {
            double frac = std::generate_canonical<double, 53>(rng);
            prev = rng() % 3 == 0 ? prev : prev * frac;
            q.q.push_back(prev);
        }
        double lambda = 0.1 + 4.0 * std::generate_canonical<double, 53>(rng);
        auto mode = rng() % 2 ? ServiceMode::infinite_server : ServiceMode::single_server;
        auto p = assignment_fractions(q, lambda, mode);
        double sum = 0;
        int nonzero = 0, first = -1, last = -1;
        for (size_t i = 0; i < p.size(); ++i) {
            REQUIRE(p[i] >= 0.0);
            sum += p[i];
            if (p[i] > 0) {
                ++nonzero;
                if (first < 0) first = int(i);
                last = int(i);
            }
        }
        REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
        REQUIRE(nonzero <= 2);
        if (nonzero == 2) REQUIRE(last == first + 1);
    }
}

TEST_CASE("departure_rates per mode") {
    auto s = from_pool_sizes({1, 1, 2}, std::nullopt); // Q = (3,1)
    auto inf = departure_rates(s, ServiceMode::infinite_server);
    CHECK(inf == std::vector<double>{2.0, 2.0});
    auto single = departure_rates(s, ServiceMode::single_server);
    CHECK(single == std::vector<double>{2.0, 1.0});
    CHECK(departure_rates(OccupancyState::empty(4, 2), ServiceMode::infinite_server).empty());
}

TEST_CASE("infinite-server rates conserve total tasks over all small states") {
    // every nonincreasing state with N <= 4, B <= 3
    for (int n = 1; n <= 4; ++n)
        for (int q1 = 0; q1 <= n; ++q1)
            for (int q2 = 0; q2 <= q1; ++q2)
                for (int q3 = 0; q3 <= q2; ++q3) {
                    OccupancyState s;
                    s.pools = n;
                    s.buffer = 3;
                    s.counts = {q1, q2, q3};
                    s.trim();
                    REQUIRE(s.valid());
                    auto mu = departure_rates(s, ServiceMode::infinite_server);
                    double total = 0;
                    for (double v : mu) total += v;
                    REQUIRE(total == double(s.total_tasks()));
                }
}

TEST_CASE("fluid distance is a metric on sampled triples") {
    std::mt19937_64 rng(13);
    auto random_state = [&]() {
        FluidState q;
        double prev = 1.0;
        int len = 1 + int(rng() % 6);
        for (int i = 0; i < len; ++i) {
            prev *= std::generate_canonical<double, 53>(rng);
            q.q.push_back(prev);
        }
        return q;
    };
    for (int trial = 0; trial < 200; ++trial) {
        auto a = random_state(), b = random_state(), c = random_state();
        REQUIRE(fluid_distance(a, a) == 0.0);
        REQUIRE(fluid_distance(a, b) == fluid_distance(b, a));
        REQUIRE(fluid_distance(a, c) <= fluid_distance(a, b) + fluid_distance(b, c) + 1e-12);
    }
}

TEST_CASE("occupancy record round-trips") {
    auto s = from_pool_sizes({1, 1, 2}, 3);
    CHECK(s.record() == "3,3,3,1,0");
    CHECK(OccupancyState::from_record(s.record()) == s);

    auto u = from_pool_sizes({2, 0}, std::nullopt);
    CHECK(u.record() == "2,inf,1,1");
    CHECK(OccupancyState::from_record(u.record()) == u);

    CHECK_THROWS_AS(OccupancyState::from_record("2,1,2,2"), std::invalid_argument);
}

TEST_CASE("growth specs evaluate and clamp") {
    CHECK(GrowthSpec::parse("16").eval_d(100) == 16);
    CHECK(GrowthSpec::parse("16").eval_n(10) == 9);    // clamp to N-1
    CHECK(GrowthSpec::parse("sqrt").eval_d(10000) == 100);
    CHECK(GrowthSpec::parse("log").eval_d(10000) == 10);
    CHECK(GrowthSpec::parse("sqrtlog").eval_d(2500) == 392);
    CHECK(GrowthSpec::parse("linear").eval_d(50) == 50);
    CHECK(GrowthSpec::parse("10*sqrtlog").eval_d(10000) == 9211);
    CHECK(GrowthSpec::parse("table:1000=4.58;10000=10.86").eval_d(1000) == 5);
    CHECK_THROWS_AS(GrowthSpec::parse("table:1000=5").eval_d(500), std::invalid_argument);
    CHECK_THROWS_AS(GrowthSpec::parse("bogus*2"), std::invalid_argument);
    CHECK(GrowthSpec::parse("0.5*linear").eval_d(100) == 50);

    auto round_trip = [](const std::string& s) {
        return GrowthSpec::parse(GrowthSpec::parse(s).str()).str() == GrowthSpec::parse(s).str();
    };
    CHECK(round_trip("sqrt"));
    CHECK(round_trip("3*log"));
    CHECK(round_trip("table:10=2;20=3"));
}

TEST_CASE("system params derive lambda, K and f") {
    SystemParams p;
    p.pools = 10000;
    p.arrival_rate = 25000;
    p.buffer = 5;
    CHECK(p.lambda() == 2.5);
    CHECK(p.k_level() == 2);
    CHECK(p.excess() == 0.5);
    CHECK(p.excess_n() == 5000.0);
    p.arrival_rate = 0;
    CHECK_THROWS_AS(p.require_valid(), std::invalid_argument);
}
