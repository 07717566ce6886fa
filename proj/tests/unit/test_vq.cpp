#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sta/data/scene.hpp"
#include "sta/vq/codec.hpp"

using namespace sta;
using namespace sta::vq;
using nn::Tensor;

namespace {

std::vector<Image> fixed_batch() {
    std::vector<Image> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(render(SceneSpec::from_combo_index(i * 27 + 5)));
    return batch;
}

double pixel_variance(const std::vector<Image>& images) {
    double sum = 0, sq = 0, n = 0;
    for (const auto& img : images)
        for (double v : img.pixels) {
            sum += v;
            sq += v * v;
            n += 1;
        }
    const double mean = sum / n;
    return sq / n - mean * mean;
}

double mse(const Image& a, const Image& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
    return s / static_cast<double>(a.pixels.size());
}

// Trained once and shared by the cases that need a fitted codec.
struct TrainedCodec {
    VqCodec codec{VqConfig{}, 11};
    std::vector<double> trajectory;

    TrainedCodec() {
        VqTrainer trainer(codec, {2e-3, 0.9, 0.99, 1e-8, 0.0}, 5);
        const auto batch = fixed_batch();
        for (int s = 0; s < 200; ++s) trajectory.push_back(trainer.step(batch).reconstruction);
    }
};

const TrainedCodec& trained() {
    static const TrainedCodec t;
    return t;
}

}  // namespace

TEST_CASE("quantize: nearest entry, exact hits and tie-break") {
    const Tensor book = Tensor::matrix({{0, 0}, {1, 1}});
    CHECK(quantize(Tensor::matrix({{0.9, 0.8}}), book).indices[0] == 1);
    CHECK(quantize(Tensor::matrix({{0.5, 0.5}}), book).indices[0] == 0);

    Rng rng(3);
    const Tensor big = randn(10, 4, 1.0, rng);
    for (std::size_t j = 0; j < 10; ++j) {
        const Tensor hit = Tensor::matrix(1, 4, {big.row(j).begin(), big.row(j).end()});
        const auto q = quantize(hit, big);
        CHECK(q.indices[0] == static_cast<int>(j));
        CHECK(q.values == hit);
    }

    CHECK_THROWS_AS(quantize(Tensor::matrix({{1, 2}}), Tensor()), std::invalid_argument);
    CHECK_THROWS_AS(quantize(Tensor::matrix({{1, 2, 3}}), book), std::invalid_argument);
}

TEST_CASE("quantize is idempotent on quantized latents") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const Tensor book = randn(16, 3, 1.0, rng);
        const Tensor z = randn(20, 3, 1.5, rng);
        const auto once = quantize(z, book);
        const auto twice = quantize(once.values, book);
        CHECK(twice.indices == once.indices);
        CHECK(twice.values == once.values);
    }
}

TEST_CASE("encode grid sizes and stride errors") {
    const VqCodec codec(VqConfig{}, 1);
    const Image img = render(SceneSpec{});
    const TokenGrid grid = codec.encode(img);
    CHECK(grid.size() == 16);
    CHECK(grid.height == 4);
    CHECK(codec.encode(img) == grid);
    for (int t : grid.tokens) {
        CHECK(t >= 0);
        CHECK(t < 64);
    }

    VqConfig paper;
    paper.image_size = 256;
    paper.stride = 16;
    paper.hidden = 8;
    paper.d_code = 4;
    const VqCodec big(paper, 1);
    CHECK(big.encode(render(SceneSpec{}, 256)).size() == 256);

    try {
        codec.encode(Image(18, 18));
        FAIL("expected an exception");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("stride 4") != std::string::npos);
    }
    VqConfig odd;
    odd.image_size = 18;
    CHECK_THROWS_AS(VqCodec(odd, 1), std::invalid_argument);
    odd = VqConfig{};
    odd.codebook_size = 1;
    CHECK_THROWS_AS(VqCodec(odd, 1), std::invalid_argument);
}

TEST_CASE("decode rejects mask tokens and stays finite over the alphabet") {
    const VqCodec codec(VqConfig{}, 2);
    TokenGrid grid{4, 4, std::vector<int>(16, 0)};
    grid.tokens[3] = 64;
    CHECK_THROWS_AS(codec.decode(grid), std::invalid_argument);
    grid.tokens[3] = -1;
    CHECK_THROWS_AS(codec.decode(grid), std::out_of_range);
    for (int t = 0; t < 64; ++t) {
        const Image out = codec.decode({4, 4, std::vector<int>(16, t)});
        for (double v : out.pixels) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("training on a fixed batch lowers reconstruction error") {
    const auto& t = trained();
    CHECK(t.trajectory.back() < t.trajectory.front());

    const auto batch = fixed_batch();
    double total = 0;
    for (const auto& img : batch) total += mse(t.codec.decode(t.codec.encode(img)), img);
    CHECK(total / batch.size() < pixel_variance(batch));

    // All-same-token grids decode to flatter images than real scenes.
    double natural = 0, flat = 0;
    for (const auto& img : batch) natural += pixel_variance({img});
    for (int tok = 0; tok < 64; ++tok) flat += pixel_variance({t.codec.decode({4, 4, std::vector<int>(16, tok)})});
    CHECK(flat / 64 < natural / batch.size());

    const Tensor& book = t.codec.codebook();
    int duplicates = 0;
    for (std::size_t a = 0; a < book.rows(); ++a)
        for (std::size_t b = a + 1; b < book.rows(); ++b) {
            double d = 0;
            for (std::size_t k = 0; k < book.cols(); ++k) d = std::max(d, std::abs(book.at(a, k) - book.at(b, k)));
            duplicates += d <= 1e-12;
        }
    CHECK(duplicates == 0);
    CHECK(book.all_finite());
}

TEST_CASE("identical seeds give identical loss trajectories") {
    VqCodec a(VqConfig{}, 11);
    VqTrainer ta(a, {2e-3, 0.9, 0.99, 1e-8, 0.0}, 5);
    const auto batch = fixed_batch();
    for (int s = 0; s < 20; ++s) CHECK(ta.step(batch).reconstruction == trained().trajectory[static_cast<std::size_t>(s)]);
}

TEST_CASE("frozen codebook with zero commitment leaves entries bit-unchanged") {
    VqConfig cfg;
    cfg.commitment = 0.0;
    cfg.dead_code_steps = 3;
    VqCodec codec(cfg, 4);
    codec.params()[codec.codebook_index()].frozen = true;
    const Tensor before = codec.codebook();
    VqTrainer trainer(codec, {}, 9);
    const auto batch = fixed_batch();
    for (int s = 0; s < 10; ++s) trainer.step(batch);
    CHECK(codec.codebook() == before);
    CHECK(trainer.reinitialised() == 0);
}

TEST_CASE("dead codes are re-seeded") {
    VqConfig cfg;
    cfg.dead_code_steps = 5;
    VqCodec codec(cfg, 4);
    VqTrainer trainer(codec, {}, 9);
    const std::vector<Image> one{render(SceneSpec{})};
    for (int s = 0; s < 6; ++s) trainer.step(one);
    CHECK(trainer.reinitialised() > 0);
}

TEST_CASE("empty batches are rejected") {
    VqCodec codec(VqConfig{}, 4);
    VqTrainer trainer(codec, {}, 9);
    CHECK_THROWS_AS(trainer.step(std::span<const Image>{}), std::invalid_argument);
}
