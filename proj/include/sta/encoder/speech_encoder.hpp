#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sta/data/caption.hpp"
#include "sta/data/scene.hpp"
#include "sta/numerics/layers.hpp"
#include "sta/numerics/optim.hpp"

namespace sta::encoder {

struct EncoderConfig {
    int d_frame = kFrameDim;
    int width = 64;
    int heads = 4;
    int layers = 2;
    int ff_hidden = 128;
    int d_emb = 32;
    int conv_kernel = 5;
    double init_inv_tau = 10.0;
    double max_inv_tau = 100.0;
};

/// Frame sequence -> L2-normalised embedding. A 1-D convolution front-end
/// (the second layer halves the length) feeds a pre-norm transformer with a
/// learnable CLS vector prepended; the CLS state is projected to d_emb.
class SpeechEncoder {
public:
    SpeechEncoder(const EncoderConfig& config, std::uint64_t seed);

    const EncoderConfig& config() const { return config_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }
    std::size_t cls_index() const { return cls_; }

    /// 1 x d_emb, unit norm. Throws std::domain_error on a zero vector.
    nn::Var embed_graph(nn::Graph& g, const nn::Tensor& frames) const;
    /// Clamped inverse temperature as a 1 x 1 node.
    nn::Var inv_tau_graph(nn::Graph& g) const;
    double inv_tau() const;

    std::vector<double> embed(const CaptionSequence& caption) const;

private:
    EncoderConfig config_;
    nn::ParameterStore params_;
    nn::Linear conv1_;
    nn::Linear conv2_;
    std::size_t cls_ = 0;
    std::size_t log_inv_tau_ = 0;
    struct Block {
        nn::LayerNormParams norm1, norm2;
        nn::MultiHeadAttention attention;
        nn::FeedForward ff;
    };
    std::vector<Block> blocks_;
    nn::LayerNormParams final_norm_;
    nn::Linear project_;
};

/// Frozen stand-in for a pretrained image tower: attribute one-hots through a
/// fixed random projection, L2-normalised. Images are mapped back to their
/// attributes by exact render match.
class TeacherEmbedder {
public:
    TeacherEmbedder(int d_emb, std::uint64_t seed, int image_size = 16);

    int dim() const { return static_cast<int>(projection_.cols()); }
    std::vector<double> embed(const SceneSpec& spec) const;
    /// Throws std::invalid_argument for images that are not corpus renders.
    std::vector<double> embed_image(const Image& image) const;
    std::uint64_t checksum() const;
    const nn::Tensor& projection() const { return projection_; }

private:
    nn::Tensor projection_;
    int image_size_;
};

/// Symmetric InfoNCE over a batch of B >= 2 matched rows: mean of the
/// row-wise (speech -> image) and column-wise (image -> speech) cross-entropies
/// of inv_tau * y x^T against the diagonal.
nn::Var contrastive_loss(nn::Graph& g, nn::Var x, nn::Var y, nn::Var inv_tau);
double contrastive_loss(const nn::Tensor& x, const nn::Tensor& y, double tau);

/// One (caption, teacher target) training pair.
struct Pair {
    const CaptionSequence* caption = nullptr;
    std::vector<double> target;
    int scene = 0;
};

struct EpochStats {
    double loss = 0.0;
    int batches = 0;
    int skipped = 0;
};

/// Shuffles with `rng`, steps the optimiser once per batch and returns the mean
/// batch loss. A trailing batch with fewer than 2 pairs is skipped.
EpochStats train_encoder_epoch(SpeechEncoder& encoder, nn::OptimizerState& optimizer, std::span<const Pair> pairs,
                               int batch_size, Rng& rng);
/// Mean contrastive loss over consecutive batches without updates.
double evaluate_encoder_loss(const SpeechEncoder& encoder, std::span<const Pair> pairs, int batch_size);

}  // namespace sta::encoder
