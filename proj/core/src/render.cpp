#include "acmseg/render.hpp"

#include <algorithm>
#include <cmath>

namespace acmseg {

namespace {

void stamp(Rgb8& c, double u, double v, Color color) {
    // 2x2 footprint centred on the point.
    const int u0 = static_cast<int>(std::floor(u - 0.5)), v0 = static_cast<int>(std::floor(v - 0.5));
    for (int dv = 0; dv < 2; ++dv) {
        for (int du = 0; du < 2; ++du) {
            const int x = u0 + du, y = v0 + dv;
            if (x < 0 || y < 0 || x >= c.width || y >= c.height) continue;
            std::uint8_t* px = c.data.data() + (static_cast<std::size_t>(y) * c.width + x) * 3;
            px[0] = color.r;
            px[1] = color.g;
            px[2] = color.b;
        }
    }
}

}  // namespace

void draw_polygon(Rgb8& canvas, const Polygon& poly, Color color) {
    const std::size_t n = poly.size();
    for (std::size_t s = 0; s < n; ++s) {
        const Point a = poly[s], b = poly[(s + 1) % n];
        const int steps = std::max(1, static_cast<int>(std::ceil(norm(b - a) * 4.0)));
        for (int k = 0; k <= steps; ++k) {
            const double t = static_cast<double>(k) / steps;
            stamp(canvas, a.u + t * (b.u - a.u), a.v + t * (b.v - a.v), color);
        }
    }
}

Rgb8 render_overlay(const Image& image, const std::optional<Polygon>& pred, const std::optional<Polygon>& gt,
                    std::span<const Polygon> inits) {
    Rgb8 out = to_rgb8(image);
    for (const auto& p : inits) draw_polygon(out, p, kInitColor);
    if (gt) draw_polygon(out, *gt, kGtColor);
    if (pred) draw_polygon(out, *pred, kPredColor);
    return out;
}

}  // namespace acmseg
