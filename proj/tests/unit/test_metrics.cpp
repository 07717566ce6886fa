#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sta/metrics/classifier.hpp"
#include "sta/metrics/metrics.hpp"

using namespace sta;
using namespace sta::metrics;
using nn::Tensor;

namespace {

FeatureStats gaussian(std::vector<double> mean, Tensor cov) {
    FeatureStats s;
    s.mean = std::move(mean);
    s.cov = std::move(cov);
    s.n = 100;
    return s;
}

Tensor random_spd(std::size_t d, Rng& rng) {
    const Tensor a = randn(d, d + 2, 1.0, rng);
    Tensor c = Tensor::zeros(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d + 2; ++k) c.at(i, j) += a.at(i, k) * a.at(j, k) / (d + 2);
    return c;
}

Tensor random_probs(std::size_t n, std::size_t c, Rng& rng) {
    Tensor p = Tensor::zeros(n, c);
    for (std::size_t r = 0; r < n; ++r) {
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) z += (p.at(r, j) = std::exp(2.0 * normal(rng)));
        for (std::size_t j = 0; j < c; ++j) p.at(r, j) /= z;
    }
    return p;
}

}  // namespace

TEST_CASE("feature_stats on hand-computed sets") {
    const auto s = feature_stats(Tensor::matrix({{0, 0}, {2, 2}}));
    CHECK(s.n == 2);
    CHECK(s.mean == std::vector<double>{1, 1});
    CHECK(s.cov == Tensor::matrix({{2, 2}, {2, 2}}));

    const auto same = feature_stats(Tensor::matrix({{1.5, -2, 3}, {1.5, -2, 3}, {1.5, -2, 3}}));
    for (double v : same.cov.values()) CHECK(v == 0.0);

    CHECK_THROWS_AS(feature_stats(Tensor::matrix({{1, 2}})), std::invalid_argument);
}

TEST_CASE("feature_stats matches a two-pass covariance") {
    Rng rng(3);
    const Tensor x = randn(1000, 4, 2.0, rng);
    const auto s = feature_stats(x);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double mi = 0, mj = 0;
            for (std::size_t r = 0; r < 1000; ++r) {
                mi += x.at(r, i);
                mj += x.at(r, j);
            }
            mi /= 1000;
            mj /= 1000;
            double c = 0;
            for (std::size_t r = 0; r < 1000; ++r) c += (x.at(r, i) - mi) * (x.at(r, j) - mj);
            c /= 999;
            CHECK(std::abs(s.cov.at(i, j) - c) < 1e-10);
            CHECK(s.cov.at(i, j) == s.cov.at(j, i));
        }
}

TEST_CASE("fid closed forms") {
    Rng rng(5);
    const auto a = gaussian({0.3, -1.0, 2.0}, random_spd(3, rng));
    CHECK(std::abs(fid(a, a)) < 1e-8);

    CHECK(std::abs(fid(gaussian({0}, Tensor::matrix({{1}})), gaussian({1}, Tensor::matrix({{1}}))) - 1.0) < 1e-8);

    const auto big = gaussian({0, 0}, Tensor::matrix({{4, 0}, {0, 4}}));
    const auto small = gaussian({0, 0}, Tensor::matrix({{1, 0}, {0, 1}}));
    CHECK(std::abs(fid(big, small) - 2.0) < 1e-10);
}

TEST_CASE("fid of diagonal covariances is the sum of squared root differences") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 5;
        Tensor ca = Tensor::zeros(d, d), cb = Tensor::zeros(d, d);
        std::vector<double> ma(d), mb(d);
        double want = 0;
        for (std::size_t i = 0; i < d; ++i) {
            ca.at(i, i) = std::exp(normal(rng));
            cb.at(i, i) = std::exp(normal(rng));
            ma[i] = normal(rng);
            mb[i] = normal(rng);
            want += (ma[i] - mb[i]) * (ma[i] - mb[i]) +
                    (std::sqrt(ca.at(i, i)) - std::sqrt(cb.at(i, i))) * (std::sqrt(ca.at(i, i)) - std::sqrt(cb.at(i, i)));
        }
        CHECK(std::abs(fid(gaussian(ma, ca), gaussian(mb, cb)) - want) < 1e-10);
    }
}

TEST_CASE("fid in two dimensions matches the eigenvalues of the covariance product") {
    // Tr sqrt(A B) is the sum of square roots of the (real, non-negative)
    // eigenvalues of A B, available in closed form for 2 x 2.
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor a = random_spd(2, rng), b = random_spd(2, rng);
        const double p00 = a.at(0, 0) * b.at(0, 0) + a.at(0, 1) * b.at(1, 0);
        const double p01 = a.at(0, 0) * b.at(0, 1) + a.at(0, 1) * b.at(1, 1);
        const double p10 = a.at(1, 0) * b.at(0, 0) + a.at(1, 1) * b.at(1, 0);
        const double p11 = a.at(1, 0) * b.at(0, 1) + a.at(1, 1) * b.at(1, 1);
        const double tr = p00 + p11, det = p00 * p11 - p01 * p10;
        const double disc = std::sqrt(std::max(0.0, tr * tr / 4 - det));
        const double cross = std::sqrt(tr / 2 + disc) + std::sqrt(std::max(0.0, tr / 2 - disc));
        const double want = 1.0 + a.at(0, 0) + a.at(1, 1) + b.at(0, 0) + b.at(1, 1) - 2 * cross;
        const auto fa = gaussian({1, 0}, a), fb = gaussian({0, 0}, b);
        CHECK(std::abs(fid(fa, fb) - want) < 1e-9);
        CHECK(std::abs(fid(fa, fb) - fid(fb, fa)) < 1e-8);
        CHECK(fid(fa, fb) >= -1e-8);
    }
}

TEST_CASE("fid rejects mismatched dimensions and indefinite covariances") {
    const auto a = gaussian({0, 0}, Tensor::matrix({{1, 0}, {0, 1}}));
    CHECK_THROWS_AS(fid(a, gaussian({0}, Tensor::matrix({{1}}))), std::invalid_argument);
    const auto bad = gaussian({0, 0}, Tensor::matrix({{1, 0}, {0, -0.5}}));
    try {
        fid(bad, a);
        FAIL("expected a domain_error");
    } catch (const std::domain_error& e) {
        CHECK(std::string(e.what()).find("smallest eigenvalue") != std::string::npos);
    }
    // Round-off sized negatives are clamped.
    const auto nearly = gaussian({0, 0}, Tensor::matrix({{1, 0}, {0, -1e-12}}));
    CHECK(std::isfinite(fid(nearly, a)));
    // The tolerance scales with the largest eigenvalue ...
    const auto big = gaussian({0, 0}, Tensor::matrix({{1e6, 0}, {0, -1e-6}}));
    CHECK(std::isfinite(fid(big, a)));
    CHECK_THROWS_AS(fid(gaussian({0, 0}, Tensor::matrix({{1e6, 0}, {0, -1e-3}})), a), std::domain_error);

    // ... so rank-deficient covariances of large features are accepted.
    Rng rng(8);
    Tensor x = randn(20, 12, 300.0, rng), y = randn(20, 12, 300.0, rng);
    for (std::size_t r = 0; r < 20; ++r) {
        for (std::size_t c = 6; c < 12; ++c) {
            x.at(r, c) = x.at(r, c - 6) * 0.7 - x.at(r, c - 5);
            y.at(r, c) = 0.0;
        }
    }
    const double d = fid(feature_stats(x), feature_stats(y));
    CHECK(std::isfinite(d));
    CHECK(d > 0.0);
}

TEST_CASE("fid decreases when samples come from the reference distribution") {
    Rng rng(21);
    const Tensor ref = randn(2000, 3, 1.0, rng);
    const Tensor same = randn(2000, 3, 1.0, rng);
    Tensor shifted = randn(2000, 3, 1.5, rng);
    for (std::size_t r = 0; r < shifted.rows(); ++r) shifted.at(r, 0) += 0.5;
    const auto sr = feature_stats(ref);
    CHECK(fid(feature_stats(same), sr) < fid(feature_stats(shifted), sr));
}

TEST_CASE("inception score bounds and closed forms") {
    const std::size_t c = 6;
    Tensor uniform(std::vector<std::size_t>{12, c}, 1.0 / c);
    CHECK(std::abs(inception_score(uniform) - 1.0) < 1e-9);

    Tensor onehot = Tensor::zeros(12, c);
    for (std::size_t r = 0; r < 12; ++r) onehot.at(r, r % c) = 1.0;
    CHECK(std::abs(inception_score(onehot) - static_cast<double>(c)) < 1e-9);

    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const double is = inception_score(random_probs(30, c, rng));
        CHECK(is >= 1.0 - 1e-9);
        CHECK(is <= c + 1e-9);
    }
}

TEST_CASE("inception score matches direct summation") {
    Rng rng(9);
    const Tensor p = random_probs(100, 10, rng);
    double kl = 0;
    for (std::size_t r = 0; r < 100; ++r)
        for (std::size_t j = 0; j < 10; ++j) {
            double marginal = 0;
            for (std::size_t q = 0; q < 100; ++q) marginal += p.at(q, j) / 100.0;
            kl += p.at(r, j) * std::log(p.at(r, j) / marginal);
        }
    CHECK(std::abs(inception_score(p) - std::exp(kl / 100.0)) < 1e-10);
}

TEST_CASE("inception score splits") {
    Rng rng(10);
    const Tensor p = random_probs(50, 4, rng);
    const auto one = inception_score_splits(p, 1);
    CHECK(one.mean == doctest::Approx(inception_score(p)).epsilon(1e-12));
    CHECK(one.sd == 0.0);

    Tensor blocks = Tensor::zeros(40, 4);
    for (std::size_t r = 0; r < 40; ++r) blocks.at(r, r % 4) = 1.0;
    const auto ten = inception_score_splits(blocks, 10);
    CHECK(ten.mean == doctest::Approx(4.0));
    CHECK(ten.sd == doctest::Approx(0.0));

    CHECK_THROWS_AS(inception_score_splits(p, 0), std::invalid_argument);
    CHECK_THROWS_AS(inception_score_splits(p, 51), std::invalid_argument);
    Tensor bad = p;
    bad.at(3, 0) += 0.1;
    CHECK_THROWS_AS(inception_score(bad), std::invalid_argument);
}

TEST_CASE("zero conditional entries contribute nothing") {
    Tensor p = Tensor::matrix({{1, 0, 0}, {0.5, 0.5, 0}});
    const double m0 = 0.75, m1 = 0.25;
    const double want = std::exp((std::log(1 / m0) + 0.5 * std::log(0.5 / m0) + 0.5 * std::log(0.5 / m1)) / 2);
    CHECK(inception_score(p) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("recall_at_k on constructed indexes") {
    Rng rng(2);
    const Tensor feats = randn(20, 6, 1.0, rng);
    RetrievalIndex self{feats, {}};
    for (int i = 0; i < 20; ++i) self.matches.push_back({i});
    CHECK(recall_at_k(self, feats, 1) == 100.0);
    CHECK(recall_at_k(self, randn(20, 6, 1.0, rng), 20) == 100.0);

    // Query q's best candidate is (q+1) mod 3 except for q=0 whose best is 0.
    RetrievalIndex idx{Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), {{0}, {1}, {2}}};
    const Tensor queries = Tensor::matrix({{1, 0.2, 0}, {0, 0.5, 1}, {0, 0.1, 1}});
    CHECK(recall_at_k(idx, queries, 1) == doctest::Approx(200.0 / 3.0));
    CHECK(recall_at_k(idx, queries, 3) == 100.0);

    CHECK_THROWS_AS(recall_at_k(idx, queries, 0), std::invalid_argument);
    CHECK_THROWS_AS(recall_at_k(idx, queries, 4), std::invalid_argument);
    RetrievalIndex missing{idx.candidates, {{0}, {}, {2}}};
    CHECK_THROWS_AS(recall_at_k(missing, queries, 1), std::invalid_argument);
}

TEST_CASE("recall ties go to the lower candidate index") {
    RetrievalIndex idx{Tensor::matrix({{1, 0}, {2, 0}, {0, 1}}), {{1}}};
    const Tensor q = Tensor::matrix({{1, 0}});
    CHECK(rank_candidates(idx.candidates, q.row(0)) == std::vector<int>{0, 1, 2});
    CHECK(recall_at_k(idx, q, 1) == 0.0);
    CHECK(recall_at_k(idx, q, 2) == 100.0);
}

TEST_CASE("recall is nondecreasing in k") {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        RetrievalIndex idx{randn(30, 4, 1.0, rng), {}};
        for (int q = 0; q < 15; ++q) idx.matches.push_back({uniform_int(rng, 0, 29), uniform_int(rng, 0, 29)});
        const Tensor queries = randn(15, 4, 1.0, rng);
        double prev = 0;
        for (int k = 1; k <= 30; ++k) {
            const double r = recall_at_k(idx, queries, k);
            CHECK(r >= prev);
            prev = r;
        }
        CHECK(prev == 100.0);
    }
}

TEST_CASE("classifier outputs and determinism") {
    ClassifierConfig cfg;
    cfg.features = 24;
    const EvalClassifier a(cfg, 1), b(cfg, 1), c(cfg, 2);
    CHECK(a.checksum() == b.checksum());
    CHECK(a.checksum() != c.checksum());
    const Image img = render(SceneSpec::parse("shape=triangle,color=blue,size=large,position=7"));
    const auto pa = a.predict(img), pb = b.predict(img);
    CHECK(pa.features.size() == static_cast<std::size_t>(cfg.feature_dim()));
    CHECK(cfg.feature_dim() == 32 + 24);
    CHECK(pa.features == pb.features);
    CHECK(pa.shape.size() == 3);
    CHECK(pa.color.size() == 4);
    CHECK(pa.size.size() == 2);
    CHECK(pa.position.size() == 9);
    const auto joint = pa.color_shape();
    CHECK(joint.size() == 12);
    double total = 0;
    for (double v : joint) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(joint[2 * 3 + 2] == doctest::Approx(pa.color[2] * pa.shape[2]));
    CHECK_THROWS_AS(a.predict(Image(8, 8)), std::invalid_argument);

    const std::vector<Image> many{img, render(SceneSpec{}), img};
    const auto batch = a.predict(many);
    CHECK(batch[0].features == pa.features);
    CHECK(batch[2].shape == pa.shape);
}

TEST_CASE("classifier training reduces loss and is reproducible") {
    std::vector<LabeledImage> data;
    for (int i = 0; i < kSceneCount; i += 5) data.push_back({render(SceneSpec::from_combo_index(i)), SceneSpec::from_combo_index(i)});
    auto run = [&] {
        EvalClassifier model({}, 4);
        nn::OptimizerState opt(model.params(), {2e-3, 0.9, 0.999, 1e-8, 0.0});
        Rng rng(8);
        std::vector<double> losses{classifier_loss(model, data)};
        for (int e = 0; e < 6; ++e) losses.push_back(train_classifier_epoch(model, opt, data, 8, 0.05, rng));
        losses.push_back(classifier_loss(model, data));
        return losses;
    };
    const auto first = run();
    CHECK(first.back() < first.front());
    CHECK(run() == first);
}
