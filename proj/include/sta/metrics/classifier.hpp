#pragma once

#include <cstdint>
#include <vector>

#include "sta/data/image.hpp"
#include "sta/data/scene.hpp"
#include "sta/numerics/layers.hpp"
#include "sta/numerics/optim.hpp"

namespace sta::metrics {

struct ClassifierConfig {
    int image_size = 16;
    int channels = 3;
    int conv1 = 16;
    int conv2 = 32;
    int features = 32;

    /// Width of the feature vector: pooled conv channels plus the dense layer.
    int feature_dim() const { return conv2 + features; }
};

struct AttributeLogits {
    nn::Var features;
    nn::Var shape;
    nn::Var color;
    nn::Var size;
    nn::Var position;
};

struct AttributePrediction {
    std::vector<double> features;
    std::vector<double> shape;
    std::vector<double> color;
    std::vector<double> size;
    std::vector<double> position;

    SceneSpec argmax() const;
    /// color x shape joint distribution, indexed like SceneSpec::color_shape_class.
    std::vector<double> color_shape() const;
};

/// Small convolutional attribute classifier used as the frozen feature
/// extractor for FID, IS and image-side retrieval.
class EvalClassifier {
public:
    EvalClassifier(const ClassifierConfig& config, std::uint64_t seed);

    const ClassifierConfig& config() const { return config_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    AttributeLogits graph(nn::Graph& g, nn::Var image) const;
    AttributePrediction predict(const Image& image) const;
    /// Predictions for many images, computed in parallel.
    std::vector<AttributePrediction> predict(const std::vector<Image>& images) const;

    /// FNV-1a over every parameter value; identifies the extractor in reports.
    std::uint64_t checksum() const;

private:
    ClassifierConfig config_;
    nn::ParameterStore params_;
    nn::Conv2d c1_;
    nn::Conv2d c2_;
    nn::Conv2d c3_;
    nn::ConvGeometry flatten_;
    nn::Linear fc_;
    nn::Linear shape_;
    nn::Linear color_;
    nn::Linear size_;
    nn::Linear position_;
};

struct LabeledImage {
    Image image;
    SceneSpec spec;
};

/// One epoch over shuffled mini-batches. Each image gets Gaussian pixel noise
/// with a standard deviation drawn from U(0, noise). Returns the mean loss.
double train_classifier_epoch(EvalClassifier& model, nn::OptimizerState& optimizer, const std::vector<LabeledImage>& data,
                              int batch_size, double noise, Rng& rng);

/// Mean summed cross-entropy of the four heads on clean images.
double classifier_loss(const EvalClassifier& model, const std::vector<LabeledImage>& data);

struct AttributeAccuracy {
    double shape = 0.0;
    double color = 0.0;
    double size = 0.0;
    double position = 0.0;
    double color_shape = 0.0;
    double all = 0.0;
};

AttributeAccuracy classifier_accuracy(const EvalClassifier& model, const std::vector<LabeledImage>& data);

}  // namespace sta::metrics
