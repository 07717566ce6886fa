#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "diffusion_oracle.hpp"
#include "sta/diffusion/process.hpp"
#include "sta/numerics/gradcheck.hpp"

using namespace sta;
using namespace sta::diffusion;
using nn::Tensor;

namespace {

Schedule default_schedule(int classes = 8) { return Schedule(100, classes, ScheduleSpec{}); }

std::vector<int> random_clean(std::size_t n, int classes, Rng& rng) {
    std::vector<int> k(n);
    for (int& v : k) v = uniform_int(rng, 0, classes - 1);
    return k;
}

}  // namespace

TEST_CASE("schedule construction") {
    SUBCASE("full masking in one step") {
        const Schedule s(1, 4, ScheduleSpec::per_step({0.0}, {1.0}));
        CHECK(s.alpha_bar(1) == 0.0);
        CHECK(s.gamma_bar(1) == 1.0);
        for (int i = 0; i < 4; ++i) {
            const auto row = s.transition_row(i, 1);
            for (int j = 0; j < 5; ++j) CHECK(row[j] == (j == 4 ? 1.0 : 0.0));
        }
    }
    SUBCASE("per-step constraint for default and random schedules") {
        const Schedule d = default_schedule(64);
        for (int t = 1; t <= 100; ++t) {
            CHECK(std::abs(d.alpha(t) + 64 * d.beta(t) + d.gamma(t) - 1.0) <= 1e-15);
            CHECK(d.alpha(t) >= 0.0);
            CHECK(d.beta(t) >= 0.0);
            CHECK(d.gamma(t) >= 0.0);
            CHECK(d.gamma_bar(t) >= d.gamma_bar(t - 1));
        }
        CHECK(d.gamma_bar(100) >= 0.99);
        CHECK(std::abs(d.gamma_bar(100) - 0.99) < 1e-12);
        CHECK(std::abs(64 * d.beta_bar(100) - 0.01) < 1e-12);
        CHECK_NOTHROW(d.require_terminal_mask());

        Rng rng(4);
        for (int trial = 0; trial < 50; ++trial) {
            const Schedule s = oracle::random_schedule(5, 3, rng);
            for (int t = 1; t <= 5; ++t) CHECK(std::abs(s.alpha(t) + 3 * s.beta(t) + s.gamma(t) - 1.0) <= 1e-15);
        }
    }
    SUBCASE("invalid specs are rejected") {
        CHECK_THROWS_AS(Schedule(0, 4, ScheduleSpec{}), std::invalid_argument);
        CHECK_THROWS_AS(Schedule(2, 4, ScheduleSpec::per_step({-0.1, 0.5}, {0.5, 0.5})), std::invalid_argument);
        CHECK_THROWS_AS(Schedule(2, 4, ScheduleSpec::per_step({0.8, 0.5}, {0.5, 0.5})), std::invalid_argument);
        CHECK_THROWS_AS(Schedule(2, 4, ScheduleSpec::per_step({0.5}, {0.5})), std::invalid_argument);
        CHECK_THROWS_AS(Schedule(5, 4, ScheduleSpec::linear(0.9, 0.2)), std::invalid_argument);
        CHECK_THROWS_AS(Schedule(5, 4, ScheduleSpec::linear(0.5, 0.1)).require_terminal_mask(), std::invalid_argument);
    }
}

TEST_CASE("transition rows") {
    const Schedule s(1, 2, ScheduleSpec::per_step({0.5}, {0.3}));
    CHECK(s.beta(1) == doctest::Approx(0.1).epsilon(1e-15));
    const auto row = s.transition_row(0, 1);
    CHECK(row[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(row[1] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(row[2] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(row[0] + row[1] + row[2] == doctest::Approx(1.0).epsilon(1e-15));
    const auto mask = s.transition_row(2, 1);
    CHECK(mask == std::vector<double>{0.0, 0.0, 1.0});
    CHECK_THROWS_AS(s.transition_row(3, 1), std::out_of_range);
    CHECK_THROWS_AS(s.transition_row(-1, 1), std::out_of_range);
}

TEST_CASE("cumulative closed form matches explicit chain products") {
    Rng rng(11);
    for (int m = 1; m <= 8; ++m) {
        for (int steps = 1; steps <= 10; ++steps) {
            for (int trial = 0; trial < 3; ++trial) {
                const Schedule s = oracle::random_schedule(steps, m, rng);
                for (int t = 0; t <= steps; ++t) {
                    const auto p = oracle::chain_product(s, t);
                    double worst = 0.0;
                    for (int i = 0; i <= m; ++i)
                        for (int j = 0; j <= m; ++j)
                            worst = std::max(worst, std::abs(p[i][j] - s.cumulative_prob(t, i, j)));
                    CHECK(worst <= 1e-10);
                }
            }
        }
    }
}

TEST_CASE("forward marginals and posteriors against enumeration oracles") {
    Rng rng(21);
    for (int m = 2; m <= 4; ++m) {
        for (int steps = 1; steps <= 5; ++steps) {
            for (int trial = 0; trial < 10; ++trial) {
                const Schedule s = oracle::random_schedule(steps, m, rng);
                for (int t = 1; t <= steps; ++t) {
                    for (int k0 = 0; k0 < m; ++k0) {
                        const int k0v[] = {k0};
                        const Field f = forward_marginal(k0v, t, s);
                        const auto ref = oracle::path_marginal(s, k0, t);
                        for (int j = 0; j <= m; ++j) CHECK(std::abs(f.at(0, j) - ref[j]) <= 1e-10);

                        for (int kt = 0; kt <= m; ++kt) {
                            const auto bayes = oracle::path_posterior(s, kt, k0, t);
                            const int ktv[] = {kt};
                            if (bayes.empty()) {
                                CHECK_THROWS_AS(posterior(ktv, k0v, t, s), std::domain_error);
                                continue;
                            }
                            const Field q = posterior(ktv, k0v, t, s);
                            double sum = 0.0;
                            for (int j = 0; j <= m; ++j) {
                                CHECK(std::abs(q.at(0, j) - bayes[j]) <= 1e-10);
                                sum += q.at(0, j);
                            }
                            CHECK(std::abs(sum - 1.0) <= 1e-9);
                            if (t == 1) {
                                for (int j = 0; j <= m; ++j) CHECK(q.at(0, j) == (j == k0 ? 1.0 : 0.0));
                            }
                        }
                    }
                }
            }
        }
    }
}

TEST_CASE("marginalisation consistency and degenerate segments") {
    Rng rng(8);
    const Schedule s = oracle::random_schedule(6, 5, rng);
    for (int k0 = 0; k0 < 5; ++k0)
        for (int t = 1; t <= 6; ++t)
            for (int kt = 0; kt <= 5; ++kt) {
                double lhs = 0.0;
                for (int prev = 0; prev <= 5; ++prev) lhs += s.cumulative_prob(t - 1, k0, prev) * s.step_prob(t, prev, kt);
                CHECK(std::abs(lhs - s.cumulative_prob(t, k0, kt)) <= 1e-10);
            }

    const Schedule identity(3, 4, ScheduleSpec::per_step({1, 1, 1}, {0, 0, 0}));
    const std::vector<int> k0{0, 3, 2};
    const Field f = forward_marginal(k0, 3, identity);
    for (std::size_t n = 0; n < 3; ++n)
        for (int j = 0; j <= 4; ++j) CHECK(f.at(n, j) == (j == k0[n] ? 1.0 : 0.0));

    const Schedule full(2, 4, ScheduleSpec::per_step({0.5, 0.0}, {0.2, 1.0}));
    CHECK(full.gamma_bar(2) == 1.0);
    Rng r(1);
    for (int v : forward_sample(k0, 2, full, r)) CHECK(v == 4);
    CHECK_THROWS_AS(forward_marginal(k0, 0, full), std::out_of_range);
    CHECK_THROWS_AS(forward_marginal(k0, 3, full), std::out_of_range);
    const std::vector<int> masked{4};
    CHECK_THROWS_AS(forward_marginal(masked, 1, full), std::out_of_range);
}

TEST_CASE("forward samples follow the marginal and the mask is absorbing") {
    const Schedule s = default_schedule(3);
    const std::vector<int> k0{1};
    const int t = 40;
    const Field f = forward_marginal(k0, t, s);
    Rng rng(99);
    std::vector<int> counts(4, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(forward_sample(k0, t, s, rng)[0])];
    for (int j = 0; j < 4; ++j) {
        const double p = f.at(0, j);
        const double sigma = std::sqrt(draws * p * (1 - p));
        CHECK(std::abs(counts[j] - draws * p) <= 3 * sigma + 1e-9);
    }

    Rng a(5), b(5);
    const std::vector<int> grid{0, 1, 2, 0, 1, 2};
    CHECK(forward_sample(grid, 50, s, a) == forward_sample(grid, 50, s, b));

    // Step-by-step corruption: once masked, a position stays masked.
    Rng walk(3);
    for (int trial = 0; trial < 200; ++trial) {
        int state = uniform_int(walk, 0, 2);
        bool masked = false;
        for (int step = 1; step <= 100; ++step) {
            state = sample_categorical(s.transition_row(state, step), walk);
            if (masked) CHECK(state == 3);
            masked = state == 3;
        }
    }
}

TEST_CASE("model reverse matches explicit summation") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const int m = uniform_int(rng, 2, 4);
        const int steps = uniform_int(rng, 2, 5);
        const Schedule s = oracle::random_schedule(steps, m, rng);
        const int t = uniform_int(rng, 1, steps);
        const int kt = uniform_int(rng, 0, m);
        std::vector<double> p(static_cast<std::size_t>(m));
        double z = 0;
        for (double& v : p) z += (v = uniform01(rng) + 0.01);
        for (double& v : p) v /= z;
        const auto ref = oracle::explicit_reverse(s, kt, t, p);
        const int ktv[] = {kt};
        const Field got = model_reverse(ktv, Tensor::matrix(1, static_cast<std::size_t>(m), p), t, s);
        for (int j = 0; j <= m; ++j) CHECK(std::abs(got.at(0, j) - ref[j]) <= 1e-10);
    }
}

TEST_CASE("diffusion loss") {
    SUBCASE("matches the explicit-summation oracle") {
        Rng rng(41);
        for (int trial = 0; trial < 50; ++trial) {
            const int m = 3, n = 2;
            const int steps = uniform_int(rng, 1, 5);
            const Schedule s = oracle::random_schedule(steps, m, rng);
            std::vector<int> k0 = random_clean(n, m, rng), kt(n), t(n);
            for (int i = 0; i < n; ++i) {
                t[i] = uniform_int(rng, 1, steps);
                const int k0i[] = {k0[i]};
                kt[i] = forward_sample(k0i, t[i], s, rng)[0];
            }
            const Tensor logits = randn(n, m, 2.0, rng);
            std::vector<std::vector<double>> lv;
            for (int i = 0; i < n; ++i) lv.emplace_back(logits.row(i).begin(), logits.row(i).end());
            const double lambda = trial % 2 ? 0.001 : 0.5;
            nn::Graph g;
            const auto terms = diffusion_loss(g, g.input(logits), k0, kt, t, s, lambda);
            CHECK(std::abs(g.item(terms.total) - oracle::explicit_loss(s, lv, k0, kt, t, lambda)) <= 1e-10);
            CHECK(g.item(terms.variational) >= -1e-12);
        }
    }
    SUBCASE("perfect model and lambda = 0") {
        const Schedule s = default_schedule(6);
        Rng rng(2);
        const std::vector<int> k0 = random_clean(16, 6, rng);
        for (int t : {1, 2, 37, 100}) {
            const std::vector<int> kt = forward_sample(k0, t, s, rng);
            Tensor logits({16, 6}, 0.0);
            for (std::size_t i = 0; i < 16; ++i) logits.at(i, static_cast<std::size_t>(k0[i])) = 1000.0;
            const std::vector<int> ts(16, t);
            nn::Graph g;
            const auto terms = diffusion_loss(g, g.input(logits), k0, kt, ts, s, 0.001);
            CHECK(std::abs(g.item(terms.variational)) < 1e-9);
            CHECK(g.item(terms.auxiliary) < 1e-9);

            nn::Graph g2;
            const Tensor rnd = randn(16, 6, 1.0, rng);
            const auto zero = diffusion_loss(g2, g2.input(rnd), k0, kt, ts, s, 0.0);
            CHECK(g2.item(zero.total) == g2.item(zero.variational));
            CHECK(g2.item(zero.auxiliary) == 0.0);
        }
    }
    SUBCASE("gradient wrt logits passes finite differences") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(seed);
            const Schedule s = oracle::random_schedule(4, 4, rng);
            const std::vector<int> k0 = random_clean(3, 4, rng);
            std::vector<int> kt(3), t(3);
            for (int i = 0; i < 3; ++i) {
                t[i] = uniform_int(rng, 1, 4);
                const int k0i[] = {k0[i]};
                kt[i] = forward_sample(k0i, t[i], s, rng)[0];
            }
            const auto r = nn::finite_difference_check(
                [&](nn::Graph& g, nn::Var x) { return diffusion_loss(g, x, k0, kt, t, s, 0.01, 2).total; },
                randn(3, 4, 1.0, rng));
            CHECK(r.max_rel_error < 1e-4);
        }
    }
    SUBCASE("rejections") {
        const Schedule s = default_schedule(4);
        nn::Graph g;
        const std::vector<int> k0{0, 1}, kt{0, 4}, t{3, 3};
        CHECK_THROWS_AS(diffusion_loss(g, g.input(Tensor::zeros(2, 5)), k0, kt, t, s, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(diffusion_loss(g, g.input(Tensor::zeros(2, 4)), k0, kt, t, s, -1.0), std::invalid_argument);
        Tensor bad = Tensor::zeros(2, 4);
        bad[0] = std::nan("");
        CHECK_THROWS_AS(diffusion_loss(g, g.input(bad), k0, kt, t, s, 0.0), std::runtime_error);
    }
}

TEST_CASE("sampler") {
    const Schedule s = default_schedule(8);
    const std::vector<int> target{3, 1, 4, 1, 5, 0, 2, 6, 5, 3, 5, 7, 7, 1, 0, 2};
    int calls = 0;
    const DenoiseFn oracle_denoiser = [&](std::span<const int> kt, int t) {
        ++calls;
        CHECK(kt.size() == target.size());
        CHECK(t >= 1);
        Tensor logits({target.size(), 8}, 0.0);
        for (std::size_t i = 0; i < target.size(); ++i) logits.at(i, static_cast<std::size_t>(target[i])) = 200.0;
        return logits;
    };
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        CHECK(sample(oracle_denoiser, 16, s, rng) == target);
        Rng rng2(seed);
        CHECK(sample(oracle_denoiser, 16, s, rng2, {true}) == target);
    }
    CHECK(calls == 10 * 100);

    const DenoiseFn flat = [](std::span<const int> kt, int) { return Tensor({kt.size(), 8}, 0.0); };
    Rng a(7), b(7);
    const auto ga = sample(flat, 16, s, a), gb = sample(flat, 16, s, b);
    CHECK(ga == gb);
    for (int v : ga) {
        CHECK(v >= 0);
        CHECK(v < 8);
    }
    const Schedule shallow(10, 8, ScheduleSpec::linear(0.5, 0.1));
    Rng c(1);
    CHECK_THROWS_AS(sample(flat, 4, shallow, c), std::invalid_argument);
}
