#include "sta/denoiser/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sta::denoiser {

using nn::Graph;
using nn::Tensor;
using nn::Var;

Var adaln(Graph& g, Var h, Var scale, Var shift) {
    Var n = g.layer_norm(h);
    return g.add(g.add(n, g.mul(n, scale)), shift);
}

Denoiser::Denoiser(const DenoiserConfig& c, std::uint64_t seed) : config_(c) {
    if (c.classes < 2 || c.positions < 1 || c.steps < 1 || c.blocks < 1)
        throw std::invalid_argument("denoiser: classes >= 2, positions >= 1, steps >= 1 and blocks >= 1 required");
    Rng rng(seed);
    const auto w = static_cast<std::size_t>(c.width);
    token_table_ = params_.add("token_embedding", randn(static_cast<std::size_t>(c.classes) + 1, w, 0.5, rng));
    pos_table_ = params_.add("position_embedding", randn(static_cast<std::size_t>(c.positions), w, 0.5, rng));
    time_table_ = params_.add("time_embedding", randn(static_cast<std::size_t>(c.steps), w, 0.5, rng));
    cond_proj_ = nn::Linear::create(params_, "cond_proj", static_cast<std::size_t>(c.d_cond), w, rng);
    const std::size_t mod_width = c.conditioning == Conditioning::adaln ? 4 * w : 2 * w;
    for (int b = 0; b < c.blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        blocks_.push_back({nn::Linear::create(params_, p + ".modulation", w, mod_width, rng, 0.0),
                           nn::MultiHeadAttention::create(params_, p + ".attn", w, static_cast<std::size_t>(c.heads), rng),
                           nn::FeedForward::create(params_, p + ".ff", w, static_cast<std::size_t>(c.ff_hidden), rng)});
    }
    final_modulation_ = nn::Linear::create(params_, "final_modulation", w, 2 * w, rng, 0.0);
    head_ = nn::Linear::create(params_, "head", w, static_cast<std::size_t>(c.classes), rng);
}

void Denoiser::freeze_condition() {
    for (std::size_t i : {cond_proj_.weight, cond_proj_.bias}) {
        params_[i].value = Tensor(params_[i].value.shape(), 0.0);
        params_[i].frozen = true;
    }
}

Var Denoiser::logits_graph(Graph& g, std::span<const int> kt, std::span<const int> t, const Tensor& y) const {
    const auto n = static_cast<std::size_t>(config_.positions);
    const std::size_t batch = t.size();
    const auto w = static_cast<std::size_t>(config_.width);
    if (batch == 0 || kt.size() != batch * n)
        throw std::invalid_argument("denoiser: expected " + std::to_string(batch) + " grids of " + std::to_string(n) +
                                    " tokens, got " + std::to_string(kt.size()) + " tokens");
    if (y.rows() != batch || y.cols() != static_cast<std::size_t>(config_.d_cond))
        throw std::invalid_argument("denoiser: condition batch " + y.shape_string() + " does not match");
    for (int k : kt)
        if (k < 0 || k > config_.classes)
            throw std::out_of_range("denoiser: token " + std::to_string(k) + " outside [0, " +
                                    std::to_string(config_.classes) + "]");
    std::vector<int> t_index(batch), pos(batch * n), owner(batch * n);
    for (std::size_t b = 0; b < batch; ++b) {
        if (t[b] < 1 || t[b] > config_.steps)
            throw std::out_of_range("denoiser: t = " + std::to_string(t[b]) + " outside [1, " +
                                    std::to_string(config_.steps) + "]");
        t_index[b] = t[b] - 1;
        for (std::size_t i = 0; i < n; ++i) {
            pos[b * n + i] = static_cast<int>(i);
            owner[b * n + i] = static_cast<int>(b);
        }
    }

    Var h = g.add(g.gather_rows(g.param(params_, token_table_), kt), g.gather_rows(g.param(params_, pos_table_), pos));
    Var cond = g.add(cond_proj_(g, params_, g.input(y)), g.gather_rows(g.param(params_, time_table_), t_index));
    Var act = g.gelu(cond);

    auto per_row = [&](Var mod, std::size_t k) { return g.gather_rows(g.slice_cols(mod, k * w, w), owner); };
    for (const auto& blk : blocks_) {
        Var mod = blk.modulation(g, params_, act);
        if (config_.conditioning == Conditioning::adaln) {
            h = g.add(h, blk.attention.blocks(g, params_, adaln(g, h, per_row(mod, 0), per_row(mod, 1)), n));
            h = g.add(h, blk.ff(g, params_, adaln(g, h, per_row(mod, 2), per_row(mod, 3))));
        } else {
            h = g.add(g.add(h, blk.attention.blocks(g, params_, g.layer_norm(h), n)), per_row(mod, 0));
            h = g.add(g.add(h, blk.ff(g, params_, g.layer_norm(h))), per_row(mod, 1));
        }
    }
    Var fmod = final_modulation_(g, params_, act);
    return head_(g, params_, adaln(g, h, per_row(fmod, 0), per_row(fmod, 1)));
}

Tensor Denoiser::logits(std::span<const int> kt, int t, std::span<const double> y) const {
    Graph g;
    const int ts[] = {t};
    return g.value(logits_graph(g, kt, ts, Tensor::matrix(1, y.size(), {y.begin(), y.end()})));
}

namespace {

struct Batch {
    std::vector<int> k0, kt, t_rows, t;
    Tensor y;
};

Batch corrupt(std::span<const TrainingPair> pairs, std::span<const std::size_t> idx, const diffusion::Schedule& s,
              std::size_t d_cond, Rng& rng) {
    Batch b;
    std::vector<double> y;
    for (std::size_t i : idx) {
        const auto& p = pairs[i];
        const int t = uniform_int(rng, 1, s.steps());
        const auto kt = diffusion::forward_sample(p.tokens, t, s, rng);
        b.k0.insert(b.k0.end(), p.tokens.begin(), p.tokens.end());
        b.kt.insert(b.kt.end(), kt.begin(), kt.end());
        b.t_rows.insert(b.t_rows.end(), p.tokens.size(), t);
        b.t.push_back(t);
        if (p.condition.size() != d_cond) throw std::invalid_argument("denoiser: condition has the wrong dimension");
        y.insert(y.end(), p.condition.begin(), p.condition.end());
    }
    b.y = Tensor::matrix(idx.size(), d_cond, std::move(y));
    return b;
}

}  // namespace

double train_denoiser_epoch(Denoiser& model, nn::OptimizerState& optimizer, std::span<const TrainingPair> pairs,
                            const diffusion::Schedule& schedule, const TrainConfig& config, Rng& rng) {
    if (config.batch_size < 1) throw std::invalid_argument("denoiser: batch size must be positive");
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto d_cond = static_cast<std::size_t>(model.config().d_cond);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size() - start);
        const Batch b = corrupt(pairs, std::span(order).subspan(start, n), schedule, d_cond, rng);
        Graph g;
        Var logits = model.logits_graph(g, b.kt, b.t, b.y);
        const auto terms = diffusion::diffusion_loss(g, logits, b.k0, b.kt, b.t_rows, schedule, config.lambda, n);
        g.backward(terms.total);
        nn::Gradients grads(model.params());
        g.accumulate(grads);
        const double lr = nn::warmup_lr(optimizer.config.lr, optimizer.step, config.warmup_steps);
        nn::adamw_step(model.params(), grads, optimizer, lr);
        total += g.item(terms.total);
        ++batches;
    }
    return batches ? total / batches : 0.0;
}

double evaluate_denoiser_loss(const Denoiser& model, std::span<const TrainingPair> pairs,
                              const diffusion::Schedule& schedule, const TrainConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size() - start);
        const Batch b = corrupt(pairs, std::span(order).subspan(start, n), schedule,
                                static_cast<std::size_t>(model.config().d_cond), rng);
        Graph g;
        Var logits = model.logits_graph(g, b.kt, b.t, b.y);
        total += g.item(diffusion::diffusion_loss(g, logits, b.k0, b.kt, b.t_rows, schedule, config.lambda, n).total);
        ++batches;
    }
    return batches ? total / batches : 0.0;
}

std::vector<int> sample_tokens(const Denoiser& model, std::span<const double> y, const diffusion::Schedule& schedule,
                               Rng& rng, const diffusion::SamplerOptions& options) {
    if (schedule.classes() != model.config().classes || schedule.steps() != model.config().steps)
        throw std::invalid_argument("denoiser: schedule does not match the model's M and T");
    const diffusion::DenoiseFn fn = [&](std::span<const int> kt, int t) { return model.logits(kt, t, y); };
    return diffusion::sample(fn, model.config().positions, schedule, rng, options);
}

}  // namespace sta::denoiser
