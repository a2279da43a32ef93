#pragma once

#include <optional>
#include <span>

#include "acmseg/geometry.hpp"
#include "acmseg/image.hpp"

namespace acmseg {

struct Color {
    std::uint8_t r, g, b;
    friend bool operator==(const Color&, const Color&) = default;
};

inline constexpr Color kInitColor{0, 0, 255};
inline constexpr Color kPredColor{255, 255, 0};
inline constexpr Color kGtColor{0, 255, 0};

// Draws a closed polygon with a 2-pixel stroke.
void draw_polygon(Rgb8& canvas, const Polygon& poly, Color color);

// Initial contours in blue, ground truth in green, prediction in yellow
// (drawn in that order, so the prediction ends up on top).
Rgb8 render_overlay(const Image& image, const std::optional<Polygon>& pred, const std::optional<Polygon>& gt,
                    std::span<const Polygon> inits = {});

}  // namespace acmseg
