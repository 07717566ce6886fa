#include "sta/metrics/classifier.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "sta/numerics/parallel.hpp"

namespace sta::metrics {

using nn::Graph;
using nn::Tensor;
using nn::Var;

namespace {

std::vector<double> softmax_row(const Tensor& logits) {
    std::vector<double> p(logits.values());
    const double mx = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (double& v : p) z += (v = std::exp(v - mx));
    for (double& v : p) v /= z;
    return p;
}

int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct Labels {
    std::vector<int> shape, color, size, position;
};

Var attribute_loss(Graph& g, const std::vector<AttributeLogits>& heads, const Labels& y) {
    auto stack = [&](Var AttributeLogits::*field) {
        std::vector<Var> rows;
        for (const auto& h : heads) rows.push_back(h.*field);
        return g.concat_rows(rows);
    };
    Var loss = g.cross_entropy(stack(&AttributeLogits::shape), y.shape);
    loss = g.add(loss, g.cross_entropy(stack(&AttributeLogits::color), y.color));
    loss = g.add(loss, g.cross_entropy(stack(&AttributeLogits::size), y.size));
    return g.add(loss, g.cross_entropy(stack(&AttributeLogits::position), y.position));
}

void push_labels(Labels& y, const SceneSpec& s) {
    y.shape.push_back(static_cast<int>(s.shape));
    y.color.push_back(static_cast<int>(s.color));
    y.size.push_back(static_cast<int>(s.size));
    y.position.push_back(s.position);
}

}  // namespace

SceneSpec AttributePrediction::argmax() const {
    SceneSpec s;
    s.shape = static_cast<Shape>(metrics::argmax(shape));
    s.color = static_cast<Color>(metrics::argmax(color));
    s.size = static_cast<Size>(metrics::argmax(size));
    s.position = metrics::argmax(position);
    return s;
}

std::vector<double> AttributePrediction::color_shape() const {
    std::vector<double> joint(color.size() * shape.size());
    for (std::size_t c = 0; c < color.size(); ++c)
        for (std::size_t s = 0; s < shape.size(); ++s) joint[c * shape.size() + s] = color[c] * shape[s];
    return joint;
}

EvalClassifier::EvalClassifier(const ClassifierConfig& config, std::uint64_t seed) : config_(config) {
    if (config.image_size % 4 != 0 || config.image_size < 4)
        throw std::invalid_argument("classifier: image size must be a positive multiple of 4");
    Rng rng(seed);
    const auto side = static_cast<std::size_t>(config.image_size);
    const auto ch = static_cast<std::size_t>(config.channels);
    const auto w1 = static_cast<std::size_t>(config.conv1);
    const auto w2 = static_cast<std::size_t>(config.conv2);
    const double gain = std::sqrt(2.0);
    c1_ = nn::Conv2d::create(params_, "c1", {side, side, ch, 3, 3, 1, 1, 1}, w1, rng, gain);
    c2_ = nn::Conv2d::create(params_, "c2", {side, side, w1, 4, 4, 2, 1, 1}, w2, rng, gain);
    c3_ = nn::Conv2d::create(params_, "c3", {side / 2, side / 2, w2, 4, 4, 2, 1, 1}, w2, rng, gain);
    flatten_ = {side / 4, side / 4, w2, side / 4, side / 4, side / 4, 0, 0};
    const auto feat = static_cast<std::size_t>(config.features);
    fc_ = nn::Linear::create(params_, "fc", flatten_.patch_size(), feat, rng, gain);
    shape_ = nn::Linear::create(params_, "head.shape", w2, kShapeCount, rng);
    color_ = nn::Linear::create(params_, "head.color", w2, kColorCount, rng);
    size_ = nn::Linear::create(params_, "head.size", w2, kSizeCount, rng);
    position_ = nn::Linear::create(params_, "head.position", feat, kPositionCount, rng);
}

AttributeLogits EvalClassifier::graph(Graph& g, Var image) const {
    Var h = g.gelu(c1_(g, params_, image));
    h = g.gelu(c2_(g, params_, h));
    h = g.gelu(c3_(g, params_, h));
    // What is drawn comes from spatially pooled features, where it is drawn
    // from the flattened map.
    const std::size_t cells = flatten_.height * flatten_.width;
    Var pooled = g.matmul(g.input(Tensor({1, cells}, 1.0 / static_cast<double>(cells))), h);
    Var placed = g.gelu(fc_(g, params_, g.im2col(h, flatten_)));
    const std::array<Var, 2> parts{pooled, placed};
    Var f = g.concat_cols(parts);
    return {f, shape_(g, params_, pooled), color_(g, params_, pooled), size_(g, params_, pooled),
            position_(g, params_, placed)};
}

AttributePrediction EvalClassifier::predict(const Image& image) const {
    if (image.height != config_.image_size || image.width != config_.image_size || image.channels != config_.channels)
        throw std::invalid_argument("classifier: expected " + std::to_string(config_.image_size) + "x" +
                                    std::to_string(config_.image_size) + " images");
    Graph g;
    const AttributeLogits out = graph(g, g.input(image.as_matrix()));
    return {g.value(out.features).values(), softmax_row(g.value(out.shape)), softmax_row(g.value(out.color)),
            softmax_row(g.value(out.size)), softmax_row(g.value(out.position))};
}

std::vector<AttributePrediction> EvalClassifier::predict(const std::vector<Image>& images) const {
    std::vector<AttributePrediction> out(images.size());
    parallel_for(images.size(), [&](std::size_t i) { out[i] = predict(images[i]); });
    return out;
}

std::uint64_t EvalClassifier::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params_)
        for (double v : p.value.values()) {
            const float f = static_cast<float>(v);
            unsigned char bytes[sizeof f];
            std::memcpy(bytes, &f, sizeof f);
            for (unsigned char b : bytes) h = (h ^ b) * 1099511628211ULL;
        }
    return h;
}

double train_classifier_epoch(EvalClassifier& model, nn::OptimizerState& optimizer, const std::vector<LabeledImage>& data,
                              int batch_size, double noise, Rng& rng) {
    if (data.empty()) throw std::invalid_argument("classifier: no training images");
    if (batch_size < 1) throw std::invalid_argument("classifier: batch size must be positive");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        Graph g;
        std::vector<AttributeLogits> heads;
        Labels y;
        for (std::size_t i = start; i < end; ++i) {
            const LabeledImage& item = data[order[i]];
            Tensor pixels = item.image.as_matrix();
            const double sigma = noise * uniform01(rng);
            for (double& v : pixels.values()) v += normal(rng, 0.0, sigma);
            heads.push_back(model.graph(g, g.input(std::move(pixels))));
            push_labels(y, item.spec);
        }
        Var loss = attribute_loss(g, heads, y);
        total += g.item(loss);
        ++batches;
        g.backward(loss);
        nn::Gradients grads(model.params());
        g.accumulate(grads);
        nn::adamw_step(model.params(), grads, optimizer);
    }
    return total / static_cast<double>(batches);
}

double classifier_loss(const EvalClassifier& model, const std::vector<LabeledImage>& data) {
    if (data.empty()) throw std::invalid_argument("classifier: no evaluation images");
    Graph g;
    std::vector<AttributeLogits> heads;
    Labels y;
    for (const auto& item : data) {
        heads.push_back(model.graph(g, g.input(item.image.as_matrix())));
        push_labels(y, item.spec);
    }
    return g.item(attribute_loss(g, heads, y));
}

AttributeAccuracy classifier_accuracy(const EvalClassifier& model, const std::vector<LabeledImage>& data) {
    if (data.empty()) throw std::invalid_argument("classifier: no evaluation images");
    std::vector<Image> images;
    for (const auto& d : data) images.push_back(d.image);
    const auto preds = model.predict(images);
    AttributeAccuracy acc;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const SceneSpec p = preds[i].argmax();
        const SceneSpec& t = data[i].spec;
        acc.shape += p.shape == t.shape;
        acc.color += p.color == t.color;
        acc.size += p.size == t.size;
        acc.position += p.position == t.position;
        acc.color_shape += p.color_shape_class() == t.color_shape_class();
        acc.all += p == t;
    }
    const double n = static_cast<double>(data.size());
    for (double* v : {&acc.shape, &acc.color, &acc.size, &acc.position, &acc.color_shape, &acc.all}) *v /= n;
    return acc;
}

}  // namespace sta::metrics
