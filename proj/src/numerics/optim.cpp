#include "sta/numerics/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace sta::nn {

OptimizerState::OptimizerState(const ParameterStore& store, AdamWConfig cfg) : config(cfg) {
    for (const auto& p : store) {
        m.emplace_back(p.value.size(), 0.0);
        v.emplace_back(p.value.size(), 0.0);
    }
}

void adamw_step(ParameterStore& params, const Gradients& grads, OptimizerState& state, double lr) {
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw std::invalid_argument("adamw_step: parameter/gradient/state counts disagree");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].value.size() || state.m[i].size() != params[i].value.size())
            throw std::invalid_argument("adamw_step: shape mismatch for parameter " + params[i].name);
        if (params[i].frozen) continue;
        for (double g : grads[i])
            if (!std::isfinite(g)) throw std::domain_error("adamw_step: non-finite gradient in parameter " + params[i].name);
    }

    const AdamWConfig& c = state.config;
    const double rate = lr > 0.0 ? lr : c.lr;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    const double decay = 1.0 - rate * c.weight_decay;

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].frozen) continue;
        auto& w = params[i].value.values();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] = w[j] * decay - rate * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

double warmup_lr(double peak, std::uint64_t step, std::uint64_t warmup) {
    if (warmup == 0 || step >= warmup) return peak;
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

void round_to_binary32(OptimizerState& state) {
    for (auto* moments : {&state.m, &state.v})
        for (auto& vec : *moments)
            for (double& x : vec) x = static_cast<float>(x);
}

}  // namespace sta::nn
