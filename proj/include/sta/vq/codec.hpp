#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sta/data/image.hpp"
#include "sta/numerics/layers.hpp"
#include "sta/numerics/optim.hpp"

namespace sta::vq {

struct VqConfig {
    int image_size = 16;
    int channels = 3;
    int stride = 4;  // power of two; one stride-2 stage per factor of two
    int hidden = 32;
    int d_code = 16;
    int codebook_size = 64;
    double commitment = 0.25;
    int dead_code_steps = 100;
};

/// Flattened row-major grid of codebook indices. Index `codebook_size` is the
/// [MASK] state and only ever appears inside diffusion.
struct TokenGrid {
    int height = 0;
    int width = 0;
    std::vector<int> tokens;

    std::size_t size() const { return tokens.size(); }
    friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

struct Quantized {
    std::vector<int> indices;
    nn::Tensor values;
};

/// Nearest codebook row per latent row (squared Euclidean distance, lowest
/// index on ties).
Quantized quantize(const nn::Tensor& latents, const nn::Tensor& codebook);

class VqCodec {
public:
    VqCodec(const VqConfig& config, std::uint64_t seed);

    const VqConfig& config() const { return config_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }
    std::size_t codebook_index() const { return codebook_; }
    const nn::Tensor& codebook() const { return params_[codebook_].value; }

    int grid_height() const { return config_.image_size / config_.stride; }
    int grid_width() const { return config_.image_size / config_.stride; }
    int token_count() const { return grid_height() * grid_width(); }

    /// Continuous encoder output, N x d_code.
    nn::Var encoder_graph(nn::Graph& g, nn::Var image) const;
    /// Decoder from an N x d_code latent grid to an unclamped H*W x C image.
    nn::Var decoder_graph(nn::Graph& g, nn::Var latents) const;

    nn::Tensor encode_latents(const Image& image) const;
    TokenGrid encode(const Image& image) const;
    /// Decoded image clamped to [0, 1]. Rejects [MASK] and out-of-range tokens.
    Image decode(const TokenGrid& grid) const;

    void check_image(const Image& image) const;

private:
    VqConfig config_;
    nn::ParameterStore params_;
    std::vector<nn::Conv2d> down_;
    nn::Linear to_code_;
    nn::Linear from_code_;
    std::vector<nn::ConvTranspose2d> up_;
    std::size_t codebook_ = 0;
};

struct VqLosses {
    double reconstruction = 0.0;
    double codebook = 0.0;
    double commitment = 0.0;
};

/// Optimiser state plus dead-code bookkeeping for one training run.
class VqTrainer {
public:
    VqTrainer(VqCodec& codec, nn::AdamWConfig optimizer, std::uint64_t seed);

    /// One gradient step on `batch`; returns the losses before the update.
    /// Throws std::runtime_error if a loss is not finite.
    VqLosses step(std::span<const Image> batch, double lr = -1.0);
    /// Losses without updating anything.
    VqLosses evaluate(std::span<const Image> batch) const;

    nn::OptimizerState& optimizer() { return opt_; }
    std::vector<int>& idle_steps() { return idle_; }
    Rng& rng() { return rng_; }
    int reinitialised() const { return reinitialised_; }

private:
    VqCodec& codec_;
    nn::OptimizerState opt_;
    std::vector<int> idle_;
    Rng rng_;
    int reinitialised_ = 0;
};

}  // namespace sta::vq
