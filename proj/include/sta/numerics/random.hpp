#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

#include "sta/numerics/tensor.hpp"

namespace sta {

using Rng = std::mt19937_64;

/// Mixes a base seed with tags (splitmix64) so that independent streams can be
/// derived per stage, epoch or item without sharing generator state.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

double uniform01(Rng& rng);
double normal(Rng& rng, double mean = 0.0, double stddev = 1.0);
int uniform_int(Rng& rng, int lo, int hi);  // inclusive bounds

/// Draws an index from unnormalised non-negative weights.
int sample_categorical(std::span<const double> weights, Rng& rng);

nn::Tensor randn(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

}  // namespace sta
