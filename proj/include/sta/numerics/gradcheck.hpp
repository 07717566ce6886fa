#pragma once

#include <functional>

#include "sta/numerics/graph.hpp"

namespace sta::nn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    double analytic_norm = 0.0;
};

/// Scalar-valued map built on a fresh graph from the leaf `x`.
using ScalarGraphFn = std::function<Var(Graph&, Var)>;

/// Compares reverse-mode gradients of `f` at `x` against central differences
/// with step `eps`. The per-element relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, scale_floor).
GradCheckResult finite_difference_check(const ScalarGraphFn& f, const Tensor& x, double eps = 1e-5,
                                        double scale_floor = 1e-3);

}  // namespace sta::nn
