#include "sta/vq/codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sta::vq {

using nn::Graph;
using nn::Tensor;
using nn::Var;

Quantized quantize(const Tensor& latents, const Tensor& codebook) {
    if (codebook.empty() || codebook.rows() == 0) throw std::invalid_argument("quantize: empty codebook");
    if (latents.cols() != codebook.cols())
        throw std::invalid_argument("quantize: latent dim " + std::to_string(latents.cols()) + " vs codebook dim " +
                                    std::to_string(codebook.cols()));
    const std::size_t n = latents.rows(), m = codebook.rows(), d = codebook.cols();
    Quantized q{std::vector<int>(n), Tensor::zeros(n, d)};
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t j = 0; j < m; ++j) {
            double dist = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = latents.at(i, k) - codebook.at(j, k);
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = j;
            }
        }
        q.indices[i] = static_cast<int>(arg);
        std::copy(codebook.row(arg).begin(), codebook.row(arg).end(), q.values.row(i).begin());
    }
    return q;
}

VqCodec::VqCodec(const VqConfig& config, std::uint64_t seed) : config_(config) {
    if (config.stride < 2 || (config.stride & (config.stride - 1)) != 0)
        throw std::invalid_argument("vq: stride must be a power of two >= 2");
    if (config.codebook_size < 2) throw std::invalid_argument("vq: codebook needs at least 2 entries");
    if (config.image_size % config.stride != 0)
        throw std::invalid_argument("vq: image size " + std::to_string(config.image_size) +
                                    " is not divisible by stride " + std::to_string(config.stride));
    Rng rng(seed);
    const auto hidden = static_cast<std::size_t>(config.hidden);
    std::size_t side = static_cast<std::size_t>(config.image_size);
    std::size_t in_ch = static_cast<std::size_t>(config.channels);
    std::vector<std::size_t> sides;
    for (int s = 1, i = 0; s < config.stride; s *= 2, ++i) {
        nn::ConvGeometry geo{side, side, in_ch, 4, 4, 2, 1, 1};
        down_.push_back(nn::Conv2d::create(params_, "enc.down" + std::to_string(i), geo, hidden, rng, std::sqrt(2.0)));
        sides.push_back(side);
        side /= 2;
        in_ch = hidden;
    }
    to_code_ = nn::Linear::create(params_, "enc.to_code", hidden, static_cast<std::size_t>(config.d_code), rng);
    from_code_ = nn::Linear::create(params_, "dec.from_code", static_cast<std::size_t>(config.d_code), hidden, rng,
                                    std::sqrt(2.0));
    for (std::size_t i = sides.size(); i-- > 0;) {
        const std::size_t out_ch = i == 0 ? static_cast<std::size_t>(config.channels) : hidden;
        nn::ConvGeometry geo{sides[i], sides[i], out_ch, 4, 4, 2, 1, 1};
        up_.push_back(nn::ConvTranspose2d::create(params_, "dec.up" + std::to_string(i), geo, hidden, rng,
                                                  i == 0 ? 1.0 : std::sqrt(2.0)));
    }
    codebook_ = params_.add("codebook", randn(static_cast<std::size_t>(config.codebook_size),
                                              static_cast<std::size_t>(config.d_code), 1.0, rng));
}

Var VqCodec::encoder_graph(Graph& g, Var image) const {
    Var h = image;
    for (const auto& conv : down_) h = g.relu(conv(g, params_, h));
    return to_code_(g, params_, h);
}

Var VqCodec::decoder_graph(Graph& g, Var latents) const {
    Var h = g.relu(from_code_(g, params_, latents));
    for (std::size_t i = 0; i < up_.size(); ++i) {
        h = up_[i](g, params_, h);
        if (i + 1 < up_.size()) h = g.relu(h);
    }
    return h;
}

void VqCodec::check_image(const Image& image) const {
    if (image.height % config_.stride != 0 || image.width % config_.stride != 0) {
        std::ostringstream os;
        os << "vq: image extents " << image.height << "x" << image.width << " must be divisible by the encoder stride "
           << config_.stride;
        throw std::invalid_argument(os.str());
    }
    if (image.height != config_.image_size || image.width != config_.image_size || image.channels != config_.channels)
        throw std::invalid_argument("vq: codec expects " + std::to_string(config_.image_size) + "x" +
                                    std::to_string(config_.image_size) + "x" + std::to_string(config_.channels) +
                                    " images");
}

Tensor VqCodec::encode_latents(const Image& image) const {
    check_image(image);
    Graph g;
    return g.value(encoder_graph(g, g.input(image.as_matrix())));
}

TokenGrid VqCodec::encode(const Image& image) const {
    return {grid_height(), grid_width(), quantize(encode_latents(image), codebook()).indices};
}

Image VqCodec::decode(const TokenGrid& grid) const {
    if (static_cast<int>(grid.tokens.size()) != token_count())
        throw std::invalid_argument("vq: token grid has " + std::to_string(grid.tokens.size()) + " entries, expected " +
                                    std::to_string(token_count()));
    for (int t : grid.tokens) {
        if (t == config_.codebook_size)
            throw std::invalid_argument("vq: cannot decode a grid containing [MASK] tokens");
        if (t < 0 || t > config_.codebook_size) throw std::out_of_range("vq: token " + std::to_string(t) + " out of range");
    }
    Graph g;
    Var z = g.gather_rows(g.input(codebook()), grid.tokens);
    Tensor out = g.value(decoder_graph(g, z));
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    return Image::from_matrix(out, config_.image_size, config_.image_size);
}

namespace {

struct BatchGraph {
    Var loss;
    VqLosses parts;
    std::vector<int> indices;
    Tensor latents;
};

BatchGraph build(Graph& g, const VqCodec& codec, std::span<const Image> batch) {
    if (batch.empty()) throw std::invalid_argument("vq: empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Var cb = g.param(codec.params(), codec.codebook_index());
    std::vector<Var> rec, book, commit;
    BatchGraph out;
    std::vector<double> latent_values;
    for (const Image& img : batch) {
        codec.check_image(img);
        Var x = g.input(img.as_matrix());
        Var z = codec.encoder_graph(g, x);
        const Quantized q = quantize(g.value(z), codec.codebook());
        out.indices.insert(out.indices.end(), q.indices.begin(), q.indices.end());
        latent_values.insert(latent_values.end(), g.value(z).values().begin(), g.value(z).values().end());
        Var e = g.gather_rows(cb, q.indices);
        book.push_back(g.mean(g.square(g.sub(g.stop_gradient(z), e))));
        commit.push_back(g.mean(g.square(g.sub(z, g.stop_gradient(e)))));
        Var recon = codec.decoder_graph(g, g.straight_through(z, e));
        rec.push_back(g.mean(g.square(g.sub(recon, x))));
    }
    auto average = [&](const std::vector<Var>& parts) {
        Var s = parts[0];
        for (std::size_t i = 1; i < parts.size(); ++i) s = g.add(s, parts[i]);
        return g.scale(s, inv_b);
    };
    Var r = average(rec), b = average(book), c = average(commit);
    out.parts = {g.item(r), g.item(b), g.item(c)};
    out.loss = g.add(g.add(r, b), g.scale(c, codec.config().commitment));
    const auto d = static_cast<std::size_t>(codec.config().d_code);
    const std::size_t rows = latent_values.size() / d;
    out.latents = Tensor::matrix(rows, d, std::move(latent_values));
    return out;
}

void check_finite(const VqLosses& l, std::uint64_t step) {
    if (std::isfinite(l.reconstruction) && std::isfinite(l.codebook) && std::isfinite(l.commitment)) return;
    std::ostringstream os;
    os << "vq: non-finite loss at step " << step << " (reconstruction=" << l.reconstruction
       << ", codebook=" << l.codebook << ", commitment=" << l.commitment << ")";
    throw std::runtime_error(os.str());
}

}  // namespace

VqTrainer::VqTrainer(VqCodec& codec, nn::AdamWConfig optimizer, std::uint64_t seed)
    : codec_(codec),
      opt_(codec.params(), optimizer),
      idle_(static_cast<std::size_t>(codec.config().codebook_size), 0),
      rng_(seed) {}

VqLosses VqTrainer::evaluate(std::span<const Image> batch) const {
    Graph g;
    return build(g, codec_, batch).parts;
}

VqLosses VqTrainer::step(std::span<const Image> batch, double lr) {
    auto& params = codec_.params();
    auto& book = params[codec_.codebook_index()];

    // The first step seeds the codebook from encoder outputs so that entries
    // start inside the latent distribution.
    if (opt_.step == 0 && !book.frozen) {
        Graph g0;
        const BatchGraph probe = build(g0, codec_, batch);
        for (std::size_t j = 0; j < book.value.rows(); ++j) {
            const auto r = static_cast<std::size_t>(uniform_int(rng_, 0, static_cast<int>(probe.latents.rows()) - 1));
            for (std::size_t k = 0; k < book.value.cols(); ++k)
                book.value.at(j, k) = probe.latents.at(r, k) + normal(rng_, 0.0, 1e-3);
        }
    }

    Graph g;
    const BatchGraph bg = build(g, codec_, batch);
    check_finite(bg.parts, opt_.step);
    g.backward(bg.loss);
    nn::Gradients grads(params);
    g.accumulate(grads);
    nn::adamw_step(params, grads, opt_, lr);

    std::vector<bool> used(idle_.size(), false);
    for (int i : bg.indices) used[static_cast<std::size_t>(i)] = true;
    const std::size_t idx = codec_.codebook_index();
    for (std::size_t j = 0; j < idle_.size(); ++j) {
        idle_[j] = used[j] ? 0 : idle_[j] + 1;
        if (book.frozen || idle_[j] < codec_.config().dead_code_steps) continue;
        const auto r = static_cast<std::size_t>(uniform_int(rng_, 0, static_cast<int>(bg.latents.rows()) - 1));
        const std::size_t d = book.value.cols();
        for (std::size_t k = 0; k < d; ++k) {
            book.value.at(j, k) = bg.latents.at(r, k) + normal(rng_, 0.0, 1e-3);
            opt_.m[idx][j * d + k] = 0.0;
            opt_.v[idx][j * d + k] = 0.0;
        }
        idle_[j] = 0;
        ++reinitialised_;
    }
    return bg.parts;
}

}  // namespace sta::vq
