#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sta/diffusion/schedule.hpp"
#include "sta/numerics/graph.hpp"
#include "sta/numerics/random.hpp"

namespace sta::diffusion {

/// N x (M+1) per-position probability rows.
using Field = nn::Tensor;

/// q(k_t | k0) for every position. k0 must be mask-free; t in [1, T].
Field forward_marginal(std::span<const int> k0, int t, const Schedule& schedule);

/// One draw per position from forward_marginal.
std::vector<int> forward_sample(std::span<const int> k0, int t, const Schedule& schedule, Rng& rng);

/// q(k_{t-1} | k_t, k0) for every position. Throws std::domain_error naming
/// the position when k_t cannot be reached from k0 in t steps.
Field posterior(std::span<const int> kt, std::span<const int> k0, int t, const Schedule& schedule);

/// Model reverse distribution p(k_{t-1} | k_t) obtained by composing the
/// posterior with predicted clean-token probabilities (N x M, rows summing to
/// one). Clean tokens that cannot reach k_t are ignored and the row is
/// renormalised.
Field model_reverse(std::span<const int> kt, const nn::Tensor& x0_probs, int t, const Schedule& schedule);

struct LossTerms {
    nn::Var total;
    nn::Var variational;
    nn::Var auxiliary;
};

/// Training objective over R rows (positions, possibly from several samples
/// stacked) with per-row timesteps. Variational part: KL(posterior || model
/// reverse) summed over rows with t > 1, and -log p(k0) for rows with t = 1;
/// divided by `samples`. Auxiliary part: lambda times the mean cross-entropy
/// of the logits against k0.
LossTerms diffusion_loss(nn::Graph& g, nn::Var logits, std::span<const int> k0, std::span<const int> kt,
                         std::span<const int> t, const Schedule& schedule, double lambda, std::size_t samples = 1);

/// Maps (k_t, t) to N x M clean-token logits.
using DenoiseFn = std::function<nn::Tensor(std::span<const int> kt, int t)>;

struct SamplerOptions {
    bool random_start = false;  // start from uniform clean tokens instead of all [MASK]
};

/// Reverse process from t = T down to 1, resampling every position each step.
/// Position n at step t draws from its own stream derive_seed(base, {t, n})
/// where base is taken from `rng`.
std::vector<int> sample(const DenoiseFn& denoise, int positions, const Schedule& schedule, Rng& rng,
                        const SamplerOptions& options = {});

}  // namespace sta::diffusion
