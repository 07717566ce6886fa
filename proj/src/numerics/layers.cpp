#include "sta/numerics/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace sta::nn {

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      double gain) {
    Linear l;
    l.in = in;
    l.out = out;
    Tensor w = gain == 0.0 ? Tensor::zeros(in, out) : randn(in, out, gain / std::sqrt(static_cast<double>(in)), rng);
    l.weight = store.add(name + ".weight", std::move(w));
    l.bias = store.add(name + ".bias", Tensor::zeros(1, out));
    return l;
}

Var Linear::operator()(Graph& g, const ParameterStore& store, Var x) const {
    return g.add_row(g.matmul(x, g.param(store, weight)), g.param(store, bias));
}

Conv2d Conv2d::create(ParameterStore& store, const std::string& name, const ConvGeometry& geometry,
                      std::size_t out_channels, Rng& rng, double gain) {
    geometry.validate();
    return {Linear::create(store, name, geometry.patch_size(), out_channels, rng, gain), geometry};
}

Var Conv2d::operator()(Graph& g, const ParameterStore& store, Var image) const {
    return kernel(g, store, g.im2col(image, geometry));
}

ConvTranspose2d ConvTranspose2d::create(ParameterStore& store, const std::string& name, const ConvGeometry& geometry,
                                        std::size_t in_channels, Rng& rng, double gain) {
    geometry.validate();
    ConvTranspose2d t;
    t.geometry = geometry;
    t.out_channels = geometry.channels;
    // Each output pixel sums about patch/stride^2 contributions.
    const double fan_in = static_cast<double>(in_channels * geometry.kernel_h * geometry.kernel_w) /
                          static_cast<double>(geometry.stride * geometry.stride);
    t.kernel.in = in_channels;
    t.kernel.out = geometry.patch_size();
    t.kernel.weight = store.add(name + ".weight", randn(in_channels, geometry.patch_size(), gain / std::sqrt(fan_in), rng));
    t.kernel.bias = store.add(name + ".bias", Tensor::zeros(1, geometry.channels));
    return t;
}

Var ConvTranspose2d::operator()(Graph& g, const ParameterStore& store, Var x) const {
    Var cols = g.matmul(x, g.param(store, kernel.weight));
    return g.add_row(g.col2im(cols, geometry), g.param(store, kernel.bias));
}

LayerNormParams LayerNormParams::create(ParameterStore& store, const std::string& name, std::size_t dim) {
    return {store.add(name + ".gain", Tensor({1, dim}, 1.0)), store.add(name + ".bias", Tensor::zeros(1, dim))};
}

Var LayerNormParams::operator()(Graph& g, const ParameterStore& store, Var x) const {
    return g.layer_norm(x, g.param(store, gain), g.param(store, bias));
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name, std::size_t width,
                                              std::size_t heads, Rng& rng) {
    if (heads == 0 || width % heads != 0) throw std::invalid_argument("attention: width must be divisible by heads");
    MultiHeadAttention a;
    a.width = width;
    a.heads = heads;
    a.qkv = Linear::create(store, name + ".qkv", width, 3 * width, rng);
    a.out = Linear::create(store, name + ".out", width, width, rng);
    return a;
}

Var MultiHeadAttention::attend(Graph& g, Var q, Var k, Var v) const {
    const std::size_t dh = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = g.slice_cols(q, h * dh, dh), kh = g.slice_cols(k, h * dh, dh), vh = g.slice_cols(v, h * dh, dh);
        Var weights = g.softmax(g.scale(g.matmul_nt(qh, kh), scale));
        outs.push_back(g.matmul(weights, vh));
    }
    return heads == 1 ? outs[0] : g.concat_cols(outs);
}

Var MultiHeadAttention::operator()(Graph& g, const ParameterStore& store, Var x) const {
    Var p = qkv(g, store, x);
    return out(g, store, attend(g, g.slice_cols(p, 0, width), g.slice_cols(p, width, width), g.slice_cols(p, 2 * width, width)));
}

Var MultiHeadAttention::blocks(Graph& g, const ParameterStore& store, Var x, std::size_t block) const {
    const std::size_t rows = g.value(x).rows();
    if (block == 0 || rows % block != 0) throw std::invalid_argument("attention: rows not divisible into blocks");
    Var p = qkv(g, store, x);
    Var q = g.slice_cols(p, 0, width), k = g.slice_cols(p, width, width), v = g.slice_cols(p, 2 * width, width);
    std::vector<Var> parts;
    for (std::size_t r = 0; r < rows; r += block)
        parts.push_back(attend(g, g.slice_rows(q, r, block), g.slice_rows(k, r, block), g.slice_rows(v, r, block)));
    return out(g, store, parts.size() == 1 ? parts[0] : g.concat_rows(parts));
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, std::size_t width, std::size_t hidden,
                                Rng& rng) {
    return {Linear::create(store, name + ".up", width, hidden, rng), Linear::create(store, name + ".down", hidden, width, rng)};
}

Var FeedForward::operator()(Graph& g, const ParameterStore& store, Var x) const {
    return down(g, store, g.gelu(up(g, store, x)));
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t width) {
    Tensor t({rows, width});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < width; ++c) {
            const double freq = std::pow(10000.0, -static_cast<double>(c / 2 * 2) / static_cast<double>(width));
            t.at(r, c) = c % 2 == 0 ? std::sin(static_cast<double>(r) * freq) : std::cos(static_cast<double>(r) * freq);
        }
    return t;
}

void round_to_binary32(ParameterStore& store) {
    for (auto& p : store)
        for (double& v : p.value.values()) v = static_cast<float>(v);
}

}  // namespace sta::nn
