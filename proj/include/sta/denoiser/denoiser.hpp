#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sta/diffusion/process.hpp"
#include "sta/numerics/layers.hpp"
#include "sta/numerics/optim.hpp"

namespace sta::denoiser {

enum class Conditioning {
    adaln,     // scale-shift modulation of the pre-attention and pre-FF norms
    additive,  // condition added to the residual stream after each sublayer
};

struct DenoiserConfig {
    int classes = 64;    // M; the embedding table also has a [MASK] row
    int positions = 16;  // N
    int steps = 100;     // T
    int d_cond = 32;
    int width = 64;
    int heads = 4;
    int blocks = 4;
    int ff_hidden = 256;
    Conditioning conditioning = Conditioning::adaln;
};

/// layer_norm(h) * (1 + scale) + shift, with per-row scale and shift.
nn::Var adaln(nn::Graph& g, nn::Var h, nn::Var scale, nn::Var shift);

class Denoiser {
public:
    Denoiser(const DenoiserConfig& config, std::uint64_t seed);

    const DenoiserConfig& config() const { return config_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    /// Logits for B stacked grids: `kt` holds B*N tokens, `t` B steps and `y`
    /// is B x d_cond. Returns (B*N) x M.
    nn::Var logits_graph(nn::Graph& g, std::span<const int> kt, std::span<const int> t, const nn::Tensor& y) const;
    nn::Tensor logits(std::span<const int> kt, int t, std::span<const double> y) const;

    /// Zeroes and freezes the projection of the speech embedding into the
    /// condition vector, making the model unconditional.
    void freeze_condition();
    std::size_t condition_weight() const { return cond_proj_.weight; }
    std::size_t condition_bias() const { return cond_proj_.bias; }
    std::size_t position_table() const { return pos_table_; }

private:
    DenoiserConfig config_;
    nn::ParameterStore params_;
    std::size_t token_table_ = 0;
    std::size_t pos_table_ = 0;
    std::size_t time_table_ = 0;
    nn::Linear cond_proj_;
    struct Block {
        nn::Linear modulation;  // condition -> 4 x width
        nn::MultiHeadAttention attention;
        nn::FeedForward ff;
    };
    std::vector<Block> blocks_;
    nn::Linear final_modulation_;
    nn::Linear head_;
};

/// One clean token grid with the speech embedding that conditions it.
struct TrainingPair {
    std::vector<int> tokens;
    std::vector<double> condition;
};

struct TrainConfig {
    int batch_size = 16;
    double lambda = 0.001;
    std::uint64_t warmup_steps = 200;
};

/// One pass over `pairs` in shuffled order: per sample draw t uniformly from
/// [1, T], corrupt with forward_sample and step the optimiser on the batch
/// loss. Learning rate warms up linearly then stays at the configured value.
double train_denoiser_epoch(Denoiser& model, nn::OptimizerState& optimizer, std::span<const TrainingPair> pairs,
                            const diffusion::Schedule& schedule, const TrainConfig& config, Rng& rng);

/// Loss on `pairs` with a fixed corruption stream seeded by `seed`.
double evaluate_denoiser_loss(const Denoiser& model, std::span<const TrainingPair> pairs,
                              const diffusion::Schedule& schedule, const TrainConfig& config, std::uint64_t seed);

/// Samples one token grid conditioned on `y`.
std::vector<int> sample_tokens(const Denoiser& model, std::span<const double> y, const diffusion::Schedule& schedule,
                               Rng& rng, const diffusion::SamplerOptions& options = {});

}  // namespace sta::denoiser
