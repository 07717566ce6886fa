#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sta/numerics/gradcheck.hpp"
#include "sta/numerics/graph.hpp"
#include "sta/numerics/random.hpp"

namespace sta::testing {

inline nn::Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return randn(r, c, scale, rng);
}

// Random fixed weights so the checked map is a non-trivial scalar of x.
inline nn::Var weighted_sum(nn::Graph& g, nn::Var x, std::uint64_t seed) {
    const nn::Tensor& X = g.value(x);
    nn::Var w = g.input(random_matrix(X.rows(), X.cols(), seed ^ 0xabcdefULL));
    return g.sum(g.mul(x, w));
}

struct GradientCase {
    std::string name;
    std::size_t rows, cols;
    nn::ScalarGraphFn fn;
};

/// One scalar probe per primitive graph operation, checked at
/// random_matrix(rows, cols, seed * 31 + 5).
inline std::vector<GradientCase> primitive_gradient_cases() {
    using namespace sta::nn;
    const Tensor other = random_matrix(4, 5, 999);
    const Tensor right = random_matrix(5, 3, 998);
    const Tensor rowv = random_matrix(1, 5, 997);
    const std::vector<int> targets{4, 0, 2, 1};
    const std::vector<int> gather{3, 0, 3, 1, 2};
    const ConvGeometry geo{.height = 4, .width = 3, .channels = 2, .kernel_h = 3, .kernel_w = 2,
                           .stride = 1, .pad_h = 1, .pad_w = 1};
    const ConvGeometry up{.height = 6, .width = 4, .channels = 1, .kernel_h = 4, .kernel_w = 4,
                          .stride = 2, .pad_h = 1, .pad_w = 1};
    return {
        {"matmul", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.matmul(x, g.input(right)), 1); }},
        {"matmul_nt", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.matmul_nt(x, g.input(other)), 2); }},
        {"matmul_nt_self", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.matmul_nt(x, x), 2); }},
        {"transpose", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.transpose(x), 3); }},
        {"add_sub_mul", 4, 5, [=](Graph& g, Var x) {
             Var o = g.input(other);
             return weighted_sum(g, g.mul(g.sub(x, o), g.add(x, o)), 4);
         }},
        {"add_row_mul_row", 4, 5, [=](Graph& g, Var x) {
             Var r = g.slice_rows(x, 0, 1);
             return weighted_sum(g, g.add_row(g.mul_row(x, r), g.input(rowv)), 5);
         }},
        {"scale_by", 4, 5, [=](Graph& g, Var x) {
             return weighted_sum(g, g.scale_by(x, g.slice_cols(g.slice_rows(x, 1, 1), 2, 1)), 6);
         }},
        {"gelu", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.gelu(x), 7); }},
        {"exp_log", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.log(g.add(g.exp(x), g.exp(x))), 8); }},
        {"softmax_rows", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.softmax(x, 1), 9); }},
        {"softmax_cols", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.softmax(x, 0), 10); }},
        {"log_softmax", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.log_softmax(x), 11); }},
        {"layer_norm", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.layer_norm(x), 12); }},
        {"l2_normalize", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.l2_normalize_rows(x), 13); }},
        {"cross_entropy", 4, 5, [=](Graph& g, Var x) { return g.cross_entropy(x, targets); }},
        {"mean_square", 4, 5, [=](Graph& g, Var x) { return g.mean(g.square(x)); }},
        {"concat", 4, 5, [=](Graph& g, Var x) {
             std::vector<Var> rows{g.slice_rows(x, 2, 2), g.slice_rows(x, 0, 1)};
             std::vector<Var> cols{g.slice_cols(x, 1, 2), x};
             return g.add(weighted_sum(g, g.concat_rows(rows), 14), weighted_sum(g, g.concat_cols(cols), 15));
         }},
        {"gather_rows", 4, 5, [=](Graph& g, Var x) { return weighted_sum(g, g.gather_rows(x, gather), 16); }},
        {"im2col", 12, 2, [=](Graph& g, Var x) { return weighted_sum(g, g.im2col(x, geo), 17); }},
        {"col2im", 6, 16, [=](Graph& g, Var x) { return weighted_sum(g, g.col2im(x, up), 18); }},
    };
}

}  // namespace sta::testing
