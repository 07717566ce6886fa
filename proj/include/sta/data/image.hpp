#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "sta/numerics/tensor.hpp"

namespace sta {

/// Channel-last RGB image with values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, int c = 3, double fill = 0.0)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

    /// (height*width) x channels matrix view used by the convolutional models.
    nn::Tensor as_matrix() const;
    static Image from_matrix(const nn::Tensor& m, int height, int width);

    friend bool operator==(const Image&, const Image&) = default;
};

/// 8-bit RGB PNG. Values are rounded to the nearest 1/255 on write.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Lays images out left-to-right, top-to-bottom with a one-pixel gutter.
Image contact_sheet(const std::vector<Image>& images, int columns);

}  // namespace sta
