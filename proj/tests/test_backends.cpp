#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "tpivot/backend.hpp"
#include "tpivot/errors.hpp"

using namespace tpivot;

namespace {

std::map<int, double> badges(std::initializer_list<double> times) {
    std::map<int, double> m;
    int k = 1;
    for (double t : times) m[k++] = t;
    return m;
}

OracleConfig single(const std::string& label, double start, double end, double duration = 60, double noise = 0.0) {
    return {Timeline{duration, {{label, start, end}}}, noise, 42};
}

PromptContext focus(const std::string& label, Boundary b, bool allow_none = false) { return {{label}, 1, b, allow_none}; }

}  // namespace

TEST_CASE("nearest badge ties go to the lower index") {
    CHECK(nearest_badge(badges({0, 8, 16, 24, 32}), 12.0) == 2);
    CHECK(nearest_badge(badges({0, 5, 10, 15}), 7.5) == 2);
    CHECK(nearest_badge(badges({0, 5, 10, 15}), 100.0) == 4);
    CHECK(center_badge(25) == 13);
    CHECK(center_badge(4) == 2);
}

TEST_CASE("noise-free oracle answers the nearest badge") {
    const auto a = oracle_answer(single("pour", 12.0, 30.0), badges({0, 8, 16, 24, 32}), focus("pour", Boundary::start), 1);
    CHECK(*a.selected_index == 2);
    const auto b = oracle_answer(single("pour", 7.5, 30.0), badges({0, 5, 10, 15}), focus("pour", Boundary::start), 1);
    CHECK(*b.selected_index == 2);
    const auto e = oracle_answer(single("pour", 7.5, 30.0), badges({0, 10, 20, 30}), focus("pour", Boundary::end), 1);
    CHECK(*e.selected_index == 4);
}

TEST_CASE("noise-free oracle equals brute-force nearest selection") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const int n = 2 + static_cast<int>(u(rng) * 30);
        std::vector<double> ts(n);
        for (auto& t : ts) t = std::round(u(rng) * 200.0) / 4.0;  // quarter seconds make ties common
        std::sort(ts.begin(), ts.end());
        std::map<int, double> m;
        for (int k = 0; k < n; ++k) m[k + 1] = ts[k];
        const double t_star = std::round(u(rng) * 200.0) / 4.0;
        const auto a = oracle_answer(single("x", t_star, t_star + 1, 60), m, focus("x", Boundary::start), rng());
        CHECK(*a.selected_index == oracle::nearest_badge(m, t_star));
    }
}

TEST_CASE("allow_none reports an action outside the badge span") {
    const auto a = oracle_answer(single("x", 40, 45), badges({0, 1.25, 2.5, 3.75, 5}), focus("x", Boundary::start, true), 9);
    CHECK_FALSE(a.selected_index.has_value());
    const auto b = oracle_answer(single("x", 2, 45), badges({0, 1.25, 2.5, 3.75, 5}), focus("x", Boundary::start, true), 9);
    CHECK(*b.selected_index == 3);
}

TEST_CASE("allow_none needs at least one badge interval of overlap") {
    const auto grazing = oracle_answer(single("x", 4.9, 9), badges({0, 1, 2, 3, 4, 5}), focus("x", Boundary::start, true), 1);
    CHECK_FALSE(grazing.selected_index.has_value());
    const auto enough = oracle_answer(single("x", 4.0, 9), badges({0, 1, 2, 3, 4, 5}), focus("x", Boundary::start, true), 1);
    CHECK(*enough.selected_index == 5);
}

TEST_CASE("repeated labels use the matching occurrence") {
    OracleConfig cfg{Timeline{30, {{"a", 0, 5}, {"b", 5, 10}, {"a", 10, 20}, {"c", 20, 30}}}, 0.0, 1};
    const auto m = badges({0, 5, 10, 15, 20, 25, 30});
    PromptContext second_a{{"a", "b", "a", "c"}, 3, Boundary::start, false};
    CHECK(*oracle_answer(cfg, m, second_a, 1).selected_index == 3);
    PromptContext first_a{{"a", "b", "a", "c"}, 1, Boundary::end, false};
    CHECK(*oracle_answer(cfg, m, first_a, 1).selected_index == 2);
}

TEST_CASE("single-listed label follows the occurrence in view") {
    OracleConfig cfg{Timeline{20, {{"x", 3, 4}, {"x", 6, 7}}}, 0.0, 1};
    const auto late = badges({5, 5.5, 6, 6.5, 7, 7.5, 8});
    CHECK(*oracle_answer(cfg, late, focus("x", Boundary::start), 1).selected_index == 3);
    const auto early = badges({2, 3, 4, 5});
    CHECK(*oracle_answer(cfg, early, focus("x", Boundary::start), 1).selected_index == 2);
}

TEST_CASE("unknown label is a configuration error") {
    CHECK_THROWS_AS(oracle_answer(single("x", 1, 2), badges({0, 1}), focus("y", Boundary::start), 1), ConfigError);
    CHECK_THROWS_AS(OracleBackend(single("x", 1, 2, 60, 1.5)), ConfigError);
}

TEST_CASE("noisy oracle is reproducible and stays in range") {
    const auto m = badges({0, 2.5, 5, 7.5, 10, 12.5, 15, 17.5, 20});
    std::vector<int> first, second;
    for (std::uint64_t key = 0; key < 200; ++key) {
        const auto a = oracle_answer(single("x", 11, 30, 60, 1.0), m, focus("x", Boundary::start), key);
        const auto b = oracle_answer(single("x", 11, 30, 60, 1.0), m, focus("x", Boundary::start), key);
        REQUIRE(a.selected_index);
        CHECK(*a.selected_index >= 1);
        CHECK(*a.selected_index <= 9);
        first.push_back(*a.selected_index);
        second.push_back(*b.selected_index);
    }
    CHECK(first == second);
    CHECK(std::set<int>(first.begin(), first.end()).size() == 9);
}

TEST_CASE("noise rate is honored on average") {
    const auto m = badges({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    int wrong = 0;
    const int trials = 4000;
    for (int key = 0; key < trials; ++key) {
        const auto a = oracle_answer(single("x", 5, 30, 60, 0.3), m, focus("x", Boundary::start), std::uint64_t(key) * 7919);
        wrong += *a.selected_index != 6;
    }
    // A random pick lands on the right badge 1/11 of the time.
    const double expected = 0.3 * 10.0 / 11.0;
    CHECK(std::abs(static_cast<double>(wrong) / trials - expected) < 0.03);
}

TEST_CASE("query keys separate calls") {
    PromptContext a{{"p", "q"}, 1, Boundary::start, false};
    PromptContext b{{"p", "q"}, 2, Boundary::start, false};
    PromptContext c{{"p", "q"}, 1, Boundary::end, false};
    const TimeWindow w{30, 60};
    CHECK(query_key(1, a, 1, w) == query_key(1, a, 1, w));
    CHECK(query_key(1, a, 1, w) != query_key(2, a, 1, w));
    CHECK(query_key(1, a, 1, w) != query_key(1, b, 1, w));
    CHECK(query_key(1, a, 1, w) != query_key(1, c, 1, w));
    CHECK(query_key(1, a, 1, w) != query_key(1, a, 2, w));
    CHECK(query_key(1, a, 1, w) != query_key(1, a, 1, {30, 30}));
}
