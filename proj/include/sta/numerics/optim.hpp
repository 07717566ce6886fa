#pragma once

#include <cstdint>
#include <vector>

#include "sta/numerics/parameters.hpp"

namespace sta::nn {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.96;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// First/second moments per parameter plus the shared step counter.
struct OptimizerState {
    AdamWConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;

    OptimizerState() = default;
    OptimizerState(const ParameterStore& store, AdamWConfig cfg);
};

/// One AdamW update with decoupled weight decay. `lr` overrides the
/// configured rate when positive (used by warmup schedules). Frozen
/// parameters are skipped. Throws before touching any parameter if a
/// gradient is non-finite.
void adamw_step(ParameterStore& params, const Gradients& grads, OptimizerState& state, double lr = -1.0);

/// Linear warmup to `peak` over `warmup` steps, constant afterwards.
double warmup_lr(double peak, std::uint64_t step, std::uint64_t warmup);

void round_to_binary32(OptimizerState& state);

}  // namespace sta::nn
