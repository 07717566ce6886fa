#include "sta/encoder/speech_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <stdexcept>

namespace sta::encoder {

using nn::Graph;
using nn::Tensor;
using nn::Var;

SpeechEncoder::SpeechEncoder(const EncoderConfig& c, std::uint64_t seed) : config_(c) {
    if (c.init_inv_tau <= 0 || c.max_inv_tau < c.init_inv_tau)
        throw std::invalid_argument("encoder: need 0 < init_inv_tau <= max_inv_tau");
    if (c.conv_kernel < 1 || c.conv_kernel % 2 == 0) throw std::invalid_argument("encoder: conv_kernel must be odd");
    Rng rng(seed);
    const auto w = static_cast<std::size_t>(c.width);
    conv1_ = nn::Linear::create(params_, "conv1", static_cast<std::size_t>(c.conv_kernel * c.d_frame), w, rng);
    conv2_ = nn::Linear::create(params_, "conv2", 4 * w, w, rng);
    cls_ = params_.add("cls", randn(1, w, 0.5, rng));
    log_inv_tau_ = params_.add("log_inv_tau", Tensor::scalar(std::log(c.init_inv_tau)));
    for (int b = 0; b < c.layers; ++b) {
        const std::string p = "block" + std::to_string(b);
        blocks_.push_back({nn::LayerNormParams::create(params_, p + ".norm1", w),
                           nn::LayerNormParams::create(params_, p + ".norm2", w),
                           nn::MultiHeadAttention::create(params_, p + ".attn", w, static_cast<std::size_t>(c.heads), rng),
                           nn::FeedForward::create(params_, p + ".ff", w, static_cast<std::size_t>(c.ff_hidden), rng)});
    }
    final_norm_ = nn::LayerNormParams::create(params_, "final_norm", w);
    project_ = nn::Linear::create(params_, "project", w, static_cast<std::size_t>(c.d_emb), rng);
}

Var SpeechEncoder::embed_graph(Graph& g, const Tensor& frames) const {
    if (frames.rows() < 1) throw std::invalid_argument("encoder: caption has no frames");
    if (frames.cols() != static_cast<std::size_t>(config_.d_frame))
        throw std::invalid_argument("encoder: expected " + std::to_string(config_.d_frame) + "-d frames, got " +
                                    frames.shape_string());
    const std::size_t len = frames.rows();
    const auto k = static_cast<std::size_t>(config_.conv_kernel);
    const auto w = static_cast<std::size_t>(config_.width);
    Var x = g.input(frames);
    nn::ConvGeometry geo1{len, 1, static_cast<std::size_t>(config_.d_frame), k, 1, 1, k / 2, 0};
    Var h = g.gelu(conv1_(g, params_, g.im2col(x, geo1)));
    nn::ConvGeometry geo2{len, 1, w, 4, 1, 2, 2, 0};
    h = g.gelu(conv2_(g, params_, g.im2col(h, geo2)));
    const std::size_t steps = g.value(h).rows();
    h = g.add(h, g.input(nn::sinusoidal_positions(steps, w)));
    const Var seq[] = {g.param(params_, cls_), h};
    h = g.concat_rows(seq);
    for (const auto& b : blocks_) {
        h = g.add(h, b.attention(g, params_, b.norm1(g, params_, h)));
        h = g.add(h, b.ff(g, params_, b.norm2(g, params_, h)));
    }
    Var cls = final_norm_(g, params_, g.slice_rows(h, 0, 1));
    return g.l2_normalize_rows(project_(g, params_, cls));
}

Var SpeechEncoder::inv_tau_graph(Graph& g) const {
    return g.exp(g.clamp_max(g.param(params_, log_inv_tau_), std::log(config_.max_inv_tau)));
}

double SpeechEncoder::inv_tau() const {
    return std::exp(std::min(params_[log_inv_tau_].value[0], std::log(config_.max_inv_tau)));
}

std::vector<double> SpeechEncoder::embed(const CaptionSequence& caption) const {
    Graph g;
    return g.value(embed_graph(g, caption.frames)).values();
}

TeacherEmbedder::TeacherEmbedder(int d_emb, std::uint64_t seed, int image_size) : image_size_(image_size) {
    if (d_emb < 1) throw std::invalid_argument("teacher: d_emb must be positive");
    Rng rng(seed);
    projection_ = randn(kShapeCount + kColorCount + kSizeCount + kPositionCount, static_cast<std::size_t>(d_emb), 1.0, rng);
}

std::vector<double> TeacherEmbedder::embed(const SceneSpec& spec) const {
    const std::size_t rows[] = {static_cast<std::size_t>(spec.shape),
                                static_cast<std::size_t>(kShapeCount + static_cast<int>(spec.color)),
                                static_cast<std::size_t>(kShapeCount + kColorCount + static_cast<int>(spec.size)),
                                static_cast<std::size_t>(kShapeCount + kColorCount + kSizeCount + spec.position)};
    std::vector<double> v(projection_.cols(), 0.0);
    for (std::size_t r : rows)
        for (std::size_t j = 0; j < v.size(); ++j) v[j] += projection_.at(r, j);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

std::vector<double> TeacherEmbedder::embed_image(const Image& image) const {
    if (image.height != image_size_) throw std::invalid_argument("teacher: unexpected image size");
    const auto spec = identify_render(image);
    if (!spec) throw std::invalid_argument("teacher: image is not a corpus render");
    return embed(*spec);
}

std::uint64_t TeacherEmbedder::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (double v : projection_.values()) {
        unsigned char bytes[sizeof v];
        std::memcpy(bytes, &v, sizeof v);
        for (unsigned char b : bytes) h = (h ^ b) * 1099511628211ULL;
    }
    return h;
}

Var contrastive_loss(Graph& g, Var x, Var y, Var inv_tau) {
    const Tensor& X = g.value(x);
    const Tensor& Y = g.value(y);
    if (!X.same_shape(Y)) throw std::invalid_argument("contrastive_loss: batches differ in shape");
    if (X.rows() < 2) throw std::invalid_argument("contrastive_loss: batch size must be at least 2");
    if (!(g.item(inv_tau) > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
    std::vector<int> diag(X.rows());
    std::iota(diag.begin(), diag.end(), 0);
    Var sim = g.scale_by(g.matmul_nt(y, x), inv_tau);
    return g.scale(g.add(g.cross_entropy(sim, diag), g.cross_entropy(g.transpose(sim), diag)), 0.5);
}

double contrastive_loss(const Tensor& x, const Tensor& y, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
    Graph g;
    return g.item(contrastive_loss(g, g.input(x), g.input(y), g.scalar(1.0 / tau)));
}

namespace {

Var batch_loss(Graph& g, const SpeechEncoder& enc, std::span<const Pair> pairs, std::span<const std::size_t> order) {
    std::vector<Var> ys;
    std::vector<double> xs;
    for (std::size_t i : order) {
        ys.push_back(enc.embed_graph(g, pairs[i].caption->frames));
        xs.insert(xs.end(), pairs[i].target.begin(), pairs[i].target.end());
    }
    const std::size_t d = pairs[order[0]].target.size();
    Var x = g.input(Tensor::matrix(order.size(), d, std::move(xs)));
    return contrastive_loss(g, x, g.concat_rows(ys), enc.inv_tau_graph(g));
}

}  // namespace

EpochStats train_encoder_epoch(SpeechEncoder& encoder, nn::OptimizerState& optimizer, std::span<const Pair> pairs,
                               int batch_size, Rng& rng) {
    if (batch_size < 2) throw std::invalid_argument("encoder: batch size must be at least 2");
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), order.size() - start);
        if (n < 2) {
            ++stats.skipped;
            continue;
        }
        Graph g;
        Var loss = batch_loss(g, encoder, pairs, std::span(order).subspan(start, n));
        if (!std::isfinite(g.item(loss))) throw std::runtime_error("encoder: non-finite contrastive loss");
        g.backward(loss);
        nn::Gradients grads(encoder.params());
        g.accumulate(grads);
        nn::adamw_step(encoder.params(), grads, optimizer);
        stats.loss += g.item(loss);
        ++stats.batches;
    }
    if (stats.batches > 0) stats.loss /= stats.batches;
    return stats;
}

double evaluate_encoder_loss(const SpeechEncoder& encoder, std::span<const Pair> pairs, int batch_size) {
    // Round-robin over scenes so that a batch repeats a scene only when there
    // are fewer scenes than batch slots.
    std::map<int, std::vector<std::size_t>> by_scene;
    for (std::size_t i = 0; i < pairs.size(); ++i) by_scene[pairs[i].scene].push_back(i);
    std::vector<std::size_t> order;
    for (std::size_t round = 0; order.size() < pairs.size(); ++round)
        for (const auto& [scene, idx] : by_scene)
            if (round < idx.size()) order.push_back(idx[round]);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), order.size() - start);
        if (n < 2) continue;
        Graph g;
        total += g.item(batch_loss(g, encoder, pairs, std::span(order).subspan(start, n)));
        ++batches;
    }
    return batches ? total / batches : 0.0;
}

}  // namespace sta::encoder
