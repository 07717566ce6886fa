#include "sta/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace sta::nn {

namespace {

double evaluate(const ScalarGraphFn& f, const Tensor& x) {
    Graph g;
    return g.item(f(g, g.input(x)));
}

}  // namespace

GradCheckResult finite_difference_check(const ScalarGraphFn& f, const Tensor& x, double eps, double scale_floor) {
    Graph g;
    Var leaf = g.input(x, true);
    Var out = f(g, leaf);
    g.backward(out);
    const std::vector<double> analytic = g.grad(leaf);

    GradCheckResult r;
    Tensor probe = x;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = evaluate(f, probe);
        probe[i] = orig - eps;
        const double down = evaluate(f, probe);
        probe[i] = orig;
        const double numeric = (up - down) / (2.0 * eps);
        const double abs_err = std::abs(analytic[i] - numeric);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), scale_floor});
        r.max_abs_error = std::max(r.max_abs_error, abs_err);
        r.max_rel_error = std::max(r.max_rel_error, abs_err / denom);
        norm2 += analytic[i] * analytic[i];
    }
    r.analytic_norm = std::sqrt(norm2);
    return r;
}

}  // namespace sta::nn
