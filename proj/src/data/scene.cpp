#include "sta/data/scene.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace sta {

namespace {

constexpr std::array<std::array<int, 3>, kColorCount> kPalette{{
    {230, 50, 50},   // red
    {50, 200, 70},   // green
    {60, 90, 230},   // blue
    {235, 215, 50},  // yellow
}};
constexpr int kBackground = 24;

bool inside(const SceneSpec& s, double px, double py, double size, double ox, double oy) {
    // Position centres sit on multiples of size/4, so with a stride-4
    // tokenizer moving one cell moves the object by exactly one token.
    const double step = size / 4.0;
    const double cx = (s.col() + 1) * step + ox;
    const double cy = (s.row() + 1) * step + oy;
    const double r = size * (s.size == Size::small ? 0.18 : 0.25);
    const double dx = px - cx, dy = py - cy;
    switch (s.shape) {
        case Shape::circle:
            return dx * dx + dy * dy <= r * r;
        case Shape::square:
            return std::abs(dx) <= r && std::abs(dy) <= r;
        case Shape::triangle:
            return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) * 0.7;
    }
    return false;
}

template <typename E>
E parse_enum(std::string_view text, int count, const char* what) {
    for (int i = 0; i < count; ++i)
        if (name_of(static_cast<E>(i)) == text) return static_cast<E>(i);
    throw std::invalid_argument(std::string("unknown ") + what + ": " + std::string(text));
}

}  // namespace

std::string_view name_of(Shape s) {
    static constexpr std::array<std::string_view, 3> n{"circle", "square", "triangle"};
    return n[static_cast<int>(s)];
}
std::string_view name_of(Color c) {
    static constexpr std::array<std::string_view, 4> n{"red", "green", "blue", "yellow"};
    return n[static_cast<int>(c)];
}
std::string_view name_of(Size s) {
    static constexpr std::array<std::string_view, 2> n{"small", "large"};
    return n[static_cast<int>(s)];
}
Shape parse_shape(std::string_view s) { return parse_enum<Shape>(s, kShapeCount, "shape"); }
Color parse_color(std::string_view s) { return parse_enum<Color>(s, kColorCount, "color"); }
Size parse_size(std::string_view s) { return parse_enum<Size>(s, kSizeCount, "size"); }

int SceneSpec::combo_index() const {
    return ((static_cast<int>(shape) * kColorCount + static_cast<int>(color)) * kSizeCount + static_cast<int>(size)) *
               kPositionCount +
           position;
}

SceneSpec SceneSpec::from_combo_index(int index) {
    if (index < 0 || index >= kSceneCount) throw std::out_of_range("scene combo index " + std::to_string(index));
    SceneSpec s;
    s.position = index % kPositionCount;
    index /= kPositionCount;
    s.size = static_cast<Size>(index % kSizeCount);
    index /= kSizeCount;
    s.color = static_cast<Color>(index % kColorCount);
    s.shape = static_cast<Shape>(index / kColorCount);
    return s;
}

std::string SceneSpec::to_string() const {
    std::ostringstream os;
    os << "shape=" << name_of(shape) << ",color=" << name_of(color) << ",size=" << name_of(size)
       << ",position=" << position;
    return os.str();
}

SceneSpec SceneSpec::parse(std::string_view text) {
    SceneSpec s;
    int seen = 0;
    while (!text.empty()) {
        const auto comma = text.find(',');
        const std::string_view item = text.substr(0, comma);
        text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) throw std::invalid_argument("scene field without '=': " + std::string(item));
        const std::string_view key = item.substr(0, eq), val = item.substr(eq + 1);
        if (key == "shape") s.shape = parse_shape(val), seen |= 1;
        else if (key == "color") s.color = parse_color(val), seen |= 2;
        else if (key == "size") s.size = parse_size(val), seen |= 4;
        else if (key == "position") {
            s.position = std::stoi(std::string(val));
            if (s.position < 0 || s.position >= kPositionCount)
                throw std::invalid_argument("position must be in [0, 9)");
            seen |= 8;
        } else {
            throw std::invalid_argument("unknown scene field: " + std::string(key));
        }
    }
    if (seen != 15) throw std::invalid_argument("scene spec needs shape, color, size and position");
    return s;
}

Image render(const SceneSpec& spec, int image_size, double dx, double dy) {
    if (image_size < 3) throw std::invalid_argument("render: image size must be at least 3");
    Image img(image_size, image_size, 3, kBackground / 255.0);
    const auto& rgb = kPalette[static_cast<int>(spec.color)];
    for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x)
            if (inside(spec, x + 0.5, y + 0.5, image_size, dx, dy))
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c] / 255.0;
    return img;
}

std::optional<SceneSpec> identify_render(const Image& image) {
    if (image.height != image.width || image.channels != 3) return std::nullopt;
    static std::mutex mu;
    static std::map<int, std::vector<Image>> cache;
    const std::vector<Image>* renders = nullptr;
    {
        std::lock_guard lock(mu);
        auto& slot = cache[image.height];
        if (slot.empty())
            for (int i = 0; i < kSceneCount; ++i) slot.push_back(render(SceneSpec::from_combo_index(i), image.height));
        renders = &slot;
    }
    for (int i = 0; i < kSceneCount; ++i)
        if ((*renders)[i].pixels == image.pixels) return SceneSpec::from_combo_index(i);
    return std::nullopt;
}

}  // namespace sta
