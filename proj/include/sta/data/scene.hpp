#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "sta/data/image.hpp"

namespace sta {

enum class Shape { circle, square, triangle };
enum class Color { red, green, blue, yellow };
enum class Size { small, large };

inline constexpr int kShapeCount = 3;
inline constexpr int kColorCount = 4;
inline constexpr int kSizeCount = 2;
inline constexpr int kPositionCount = 9;
inline constexpr int kSceneCount = kShapeCount * kColorCount * kSizeCount * kPositionCount;  // 216

/// Attribute tuple describing one synthetic scene. `position` indexes a 3x3
/// cell grid row-major (0 = top-left).
struct SceneSpec {
    Shape shape = Shape::circle;
    Color color = Color::red;
    Size size = Size::small;
    int position = 0;

    int row() const { return position / 3; }
    int col() const { return position % 3; }

    /// Dense index in [0, 216).
    int combo_index() const;
    static SceneSpec from_combo_index(int index);

    /// Joint (color, shape) class in [0, 12): the attribute pair scored on
    /// generated images.
    int color_shape_class() const { return static_cast<int>(color) * kShapeCount + static_cast<int>(shape); }

    std::string to_string() const;
    /// Parses "shape=circle,color=red,size=small,position=4".
    static SceneSpec parse(std::string_view text);

    friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

std::string_view name_of(Shape s);
std::string_view name_of(Color c);
std::string_view name_of(Size s);
Shape parse_shape(std::string_view s);
Color parse_color(std::string_view s);
Size parse_size(std::string_view s);

/// Deterministic, aliasing-free rasterisation. Every pixel is either the
/// background or the scene colour; all values are multiples of 1/255 so PNG
/// storage is lossless.
/// `dx`, `dy` shift the shape by a (sub-)pixel amount; the corpus always uses
/// the unshifted render.
Image render(const SceneSpec& spec, int image_size = 16, double dx = 0.0, double dy = 0.0);

/// Maps an image back to its scene if it is an exact render (or nullopt).
std::optional<SceneSpec> identify_render(const Image& image);

}  // namespace sta
