#include "sta/data/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace sta {

nn::Tensor Image::as_matrix() const {
    return nn::Tensor({static_cast<std::size_t>(height) * width, static_cast<std::size_t>(channels)}, pixels);
}

Image Image::from_matrix(const nn::Tensor& m, int height, int width) {
    if (m.rows() != static_cast<std::size_t>(height) * width)
        throw std::invalid_argument("Image::from_matrix: " + m.shape_string() + " is not " +
                                    std::to_string(height) + "x" + std::to_string(width));
    Image img;
    img.height = height;
    img.width = width;
    img.channels = static_cast<int>(m.cols());
    img.pixels = m.values();
    return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 3) throw std::invalid_argument("write_png: only RGB images are supported");
    std::vector<std::uint8_t> bytes(image.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const double v = std::clamp(image.pixels[i], 0.0, 1.0);
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr))
        throw std::runtime_error("write_png: " + path.string() + ": " + png.message);
}

Image read_png(const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str()))
        throw std::runtime_error("read_png: " + path.string() + ": " + png.message);
    png.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr))
        throw std::runtime_error("read_png: " + path.string() + ": " + png.message);
    Image img(static_cast<int>(png.height), static_cast<int>(png.width), 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
    return img;
}

Image contact_sheet(const std::vector<Image>& images, int columns) {
    if (images.empty()) throw std::invalid_argument("contact_sheet: no images");
    columns = std::max(1, std::min<int>(columns, static_cast<int>(images.size())));
    const int rows = (static_cast<int>(images.size()) + columns - 1) / columns;
    const int h = images.front().height, w = images.front().width;
    Image sheet(rows * (h + 1) + 1, columns * (w + 1) + 1, 3, 1.0);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const int oy = static_cast<int>(i) / columns * (h + 1) + 1;
        const int ox = static_cast<int>(i) % columns * (w + 1) + 1;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) sheet.at(oy + y, ox + x, c) = images[i].at(y, x, c);
    }
    return sheet;
}

}  // namespace sta
