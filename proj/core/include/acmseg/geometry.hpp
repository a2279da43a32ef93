#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace acmseg {

// Pixel-space point. u is the column, v the row; pixel (u, v) has its center
// at integer coordinates (u, v) and the origin is the top-left pixel.
struct Point {
    double u = 0.0;
    double v = 0.0;

    Point& operator+=(const Point& o) { u += o.u; v += o.v; return *this; }
    Point& operator-=(const Point& o) { u -= o.u; v -= o.v; return *this; }
    Point& operator*=(double s) { u *= s; v *= s; return *this; }
    friend Point operator+(Point a, const Point& b) { return a += b; }
    friend Point operator-(Point a, const Point& b) { return a -= b; }
    friend Point operator*(Point a, double s) { return a *= s; }
    friend Point operator*(double s, Point a) { return a *= s; }
    friend bool operator==(const Point&, const Point&) = default;
};

inline double dot(const Point& a, const Point& b) { return a.u * b.u + a.v * b.v; }
inline double squared_norm(const Point& a) { return dot(a, a); }
double norm(const Point& a);

// Closed polygon; node L-1 connects back to node 0. Construction validates
// L >= 3 and finite coordinates, so every Polygon in circulation is valid.
class Polygon {
public:
    explicit Polygon(std::vector<Point> nodes);

    std::size_t size() const { return nodes_.size(); }
    const Point& operator[](std::size_t i) const { return nodes_[i]; }
    std::span<const Point> nodes() const { return nodes_; }

    friend bool operator==(const Polygon&, const Polygon&) = default;

private:
    std::vector<Point> nodes_;
};

// Binary pixel mask, row-major (index = v * width + u).
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int w, int h);

    bool at(int u, int v) const { return bits[static_cast<std::size_t>(v) * width + u] != 0; }
    void set(int u, int v, bool on) { bits[static_cast<std::size_t>(v) * width + u] = on ? 1 : 0; }
    std::size_t count() const;

    friend bool operator==(const Mask&, const Mask&) = default;
};

// Even-odd crossing test of the horizontal ray from (u, v) towards +u against
// the directed edge a -> b. Shared by every rasterization path so that all of
// them agree bit for bit.
inline bool ray_crosses(const Point& a, const Point& b, double u, double v) {
    return ((a.v > v) != (b.v > v)) && (u < (b.u - a.u) * (v - a.v) / (b.v - a.v) + a.u);
}

// Pixels whose center lies inside the polygon under the even-odd rule.
Mask rasterize(const Polygon& poly, int width, int height);

// Calls fn(v, u_begin, u_end) for every run of inside pixels [u_begin, u_end)
// on row v, clipped to the grid. Same membership as rasterize().
template <typename Fn>
void for_each_span(const Polygon& poly, int width, int height, Fn&& fn);

// |a ∩ b| / |a ∪ b|; 1.0 when both masks are empty.
double iou(const Mask& a, const Mask& b);

// L nodes equally spaced by arc length, starting at node 0 of the input.
Polygon resample(const Polygon& poly, int L);

// y_{s+1} - y_s, cyclic.
std::vector<Point> first_diff(const Polygon& poly);
// y_{s+1} - 2 y_s + y_{s-1}, cyclic.
std::vector<Point> second_diff(const Polygon& poly);

double perimeter(const Polygon& poly);
double signed_area(const Polygon& poly);
Polygon translate(const Polygon& poly, Point offset);
Polygon scale(const Polygon& poly, double su, double sv);
Polygon circle(Point center, double radius, int L);

struct Bounds {
    double min_u, min_v, max_u, max_v;
};
Bounds bounds(const Polygon& poly);

// {"nodes": [[u, v], ...]}
std::string polygon_to_json(const Polygon& poly);
Polygon polygon_from_json(const std::string& text);
void write_polygon(const std::string& path, const Polygon& poly);
Polygon read_polygon(const std::string& path);

}  // namespace acmseg

#include "acmseg/detail/span_fill.hpp"
