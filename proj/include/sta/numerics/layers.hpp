#pragma once

#include <cstddef>
#include <string>

#include "sta/numerics/graph.hpp"
#include "sta/numerics/random.hpp"

namespace sta::nn {

/// y = x W + b with W stored as in x out.
struct Linear {
    std::size_t weight = 0;
    std::size_t bias = 0;
    std::size_t in = 0;
    std::size_t out = 0;

    /// Weights ~ N(0, gain^2 / in); `gain = 0` gives an all-zero layer.
    static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                         double gain = 1.0);
    Var operator()(Graph& g, const ParameterStore& store, Var x) const;
};

/// Convolution over channel-last images via im2col.
struct Conv2d {
    Linear kernel;
    ConvGeometry geometry;

    static Conv2d create(ParameterStore& store, const std::string& name, const ConvGeometry& geometry,
                         std::size_t out_channels, Rng& rng, double gain = 1.0);
    Var operator()(Graph& g, const ParameterStore& store, Var image) const;
};

/// Transposed convolution: the adjoint of a Conv2d whose input geometry is
/// `geometry` (so the output image has geometry.height x geometry.width).
struct ConvTranspose2d {
    Linear kernel;
    ConvGeometry geometry;
    std::size_t out_channels = 0;

    static ConvTranspose2d create(ParameterStore& store, const std::string& name, const ConvGeometry& geometry,
                                  std::size_t in_channels, Rng& rng, double gain = 1.0);
    Var operator()(Graph& g, const ParameterStore& store, Var x) const;
};

struct LayerNormParams {
    std::size_t gain = 0;
    std::size_t bias = 0;

    static LayerNormParams create(ParameterStore& store, const std::string& name, std::size_t dim);
    Var operator()(Graph& g, const ParameterStore& store, Var x) const;
};

/// Multi-head self-attention over the rows of one sequence (L x width).
struct MultiHeadAttention {
    Linear qkv;
    Linear out;
    std::size_t heads = 1;
    std::size_t width = 0;

    static MultiHeadAttention create(ParameterStore& store, const std::string& name, std::size_t width,
                                     std::size_t heads, Rng& rng);
    Var operator()(Graph& g, const ParameterStore& store, Var x) const;
    /// Attention applied independently to consecutive blocks of `block` rows.
    Var blocks(Graph& g, const ParameterStore& store, Var x, std::size_t block) const;

private:
    Var attend(Graph& g, Var q, Var k, Var v) const;
};

/// Position-wise two-layer GELU network.
struct FeedForward {
    Linear up;
    Linear down;

    static FeedForward create(ParameterStore& store, const std::string& name, std::size_t width, std::size_t hidden,
                              Rng& rng);
    Var operator()(Graph& g, const ParameterStore& store, Var x) const;
};

/// Fixed sinusoidal position table, rows x width.
Tensor sinusoidal_positions(std::size_t rows, std::size_t width);

/// Rounds every stored value to the nearest binary32, the precision of
/// checkpoints. Applied at epoch boundaries so resumed runs match.
void round_to_binary32(ParameterStore& store);

}  // namespace sta::nn
