#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sta/numerics/parameters.hpp"
#include "sta/numerics/tensor.hpp"

namespace sta::nn {

/// Handle to a node recorded in a Graph.
struct Var {
    std::uint32_t id = UINT32_MAX;
};

/// Patch geometry shared by im2col / col2im. Images are stored channel-last
/// as a (height*width) x channels matrix.
struct ConvGeometry {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;

    std::size_t out_height() const { return (height + 2 * pad_h - kernel_h) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * pad_w - kernel_w) / stride + 1; }
    std::size_t patch_size() const { return kernel_h * kernel_w * channels; }
    void validate() const;
};

/// Recorded computation graph with reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order for backward(). A graph is single-use: build it,
/// call backward() once, read gradients. Distinct graphs share nothing and may
/// live on different threads.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf holding a copy of `t`. Gradients are tracked only when requested.
    Var input(Tensor t, bool requires_grad = false);
    Var scalar(double v) { return input(Tensor::scalar(v)); }
    /// Leaf aliasing a parameter's storage; the store must outlive the graph.
    Var param(const ParameterStore& store, std::size_t index);

    const Tensor& value(Var v) const;
    double item(Var v) const;
    /// Gradient of the last backward() root with respect to `v`.
    const std::vector<double>& grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    std::size_t node_count() const { return nodes_.size(); }

    void backward(Var loss);
    /// Adds parameter-leaf gradients into `out` (only leaves from out's store).
    void accumulate(Gradients& out) const;

    // Linear algebra
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);
    Var transpose(Var a);

    // Elementwise
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var add_row(Var x, Var row);
    Var mul_row(Var x, Var row);
    Var scale(Var x, double s);
    Var scale_by(Var x, Var s);
    Var square(Var x);
    Var relu(Var x);
    Var gelu(Var x);
    Var exp(Var x);
    Var log(Var x, double floor = 1e-300);
    Var clamp_max(Var x, double hi);

    // Normalisation and losses
    Var softmax(Var x, int axis = 1);
    Var log_softmax(Var x);
    Var layer_norm(Var x, double eps = 1e-5);
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
    Var l2_normalize_rows(Var x);
    Var cross_entropy(Var logits, std::span<const int> targets);

    // Reductions
    Var sum(Var x);
    Var mean(Var x);

    // Structure
    Var slice_rows(Var x, std::size_t start, std::size_t count);
    Var slice_cols(Var x, std::size_t start, std::size_t count);
    Var concat_rows(std::span<const Var> parts);
    Var concat_cols(std::span<const Var> parts);
    Var gather_rows(Var table, std::span<const int> indices);
    Var im2col(Var image, const ConvGeometry& geometry);
    Var col2im(Var cols, const ConvGeometry& geometry);

    /// Forward value of `quantized`, gradient routed unchanged to `x`.
    Var straight_through(Var x, Var quantized);
    Var stop_gradient(Var x);

private:
    struct Node {
        Tensor owned;
        const Tensor* alias = nullptr;
        std::vector<double> grad;
        std::function<void(Graph&)> backward;
        const ParameterStore* store = nullptr;
        std::size_t param_index = 0;
        bool requires_grad = false;
    };

    Var push(Tensor value, bool requires_grad, std::function<void(Graph&)> backward);
    Node& node(Var v) { return nodes_[v.id]; }
    const Node& node(Var v) const { return nodes_[v.id]; }
    std::vector<double>& g(Var v) { return nodes_[v.id].grad; }
    bool needs(Var v) const { return nodes_[v.id].requires_grad; }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace sta::nn
