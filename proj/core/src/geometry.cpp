#include "acmseg/geometry.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace acmseg {

double norm(const Point& a) { return std::hypot(a.u, a.v); }

Polygon::Polygon(std::vector<Point> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.size() < 3) {
        throw std::invalid_argument("polygon needs at least 3 nodes, got " + std::to_string(nodes_.size()));
    }
    for (const auto& p : nodes_) {
        if (!std::isfinite(p.u) || !std::isfinite(p.v)) {
            throw std::invalid_argument("polygon has a non-finite coordinate");
        }
    }
}

Mask::Mask(int w, int h) : width(w), height(h) {
    if (w < 1 || h < 1) throw std::invalid_argument("mask dimensions must be positive");
    bits.assign(static_cast<std::size_t>(w) * h, 0);
}

std::size_t Mask::count() const {
    std::size_t c = 0;
    for (auto b : bits) c += b;
    return c;
}

Mask rasterize(const Polygon& poly, int width, int height) {
    Mask m(width, height);
    for_each_span(poly, width, height, [&](int v, int ub, int ue) {
        auto* row = m.bits.data() + static_cast<std::size_t>(v) * width;
        std::fill(row + ub, row + ue, std::uint8_t{1});
    });
    return m;
}

double iou(const Mask& a, const Mask& b) {
    if (a.width != b.width || a.height != b.height) {
        throw std::invalid_argument("iou: mask dimensions differ");
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] & b.bits[i];
        uni += a.bits[i] | b.bits[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double perimeter(const Polygon& poly) {
    double p = 0.0;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) p += norm(poly[(i + 1) % n] - poly[i]);
    return p;
}

double signed_area(const Polygon& poly) {
    double a = 0.0;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = poly[i];
        const Point& q = poly[(i + 1) % n];
        a += p.u * q.v - q.u * p.v;
    }
    return 0.5 * a;
}

Polygon resample(const Polygon& poly, int L) {
    if (L < 3) throw std::invalid_argument("resample: L must be >= 3");
    const std::size_t n = poly.size();
    std::vector<double> cum(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) cum[i + 1] = cum[i] + norm(poly[(i + 1) % n] - poly[i]);
    const double total = cum[n];
    if (!(total > 0.0)) throw std::invalid_argument("resample: polygon has zero perimeter");

    std::vector<Point> out;
    out.reserve(static_cast<std::size_t>(L));
    std::size_t seg = 0;
    for (int k = 0; k < L; ++k) {
        const double t = total * k / L;
        while (seg + 1 < n && cum[seg + 1] <= t) ++seg;
        const double len = cum[seg + 1] - cum[seg];
        const double f = len > 0.0 ? (t - cum[seg]) / len : 0.0;
        const Point& a = poly[seg];
        const Point& b = poly[(seg + 1) % n];
        out.push_back(a + (b - a) * f);
    }
    return Polygon(std::move(out));
}

std::vector<Point> first_diff(const Polygon& poly) {
    const std::size_t n = poly.size();
    std::vector<Point> d(n);
    for (std::size_t s = 0; s < n; ++s) d[s] = poly[(s + 1) % n] - poly[s];
    return d;
}

std::vector<Point> second_diff(const Polygon& poly) {
    const std::size_t n = poly.size();
    std::vector<Point> d(n);
    for (std::size_t s = 0; s < n; ++s) {
        d[s] = poly[(s + 1) % n] - 2.0 * poly[s] + poly[(s + n - 1) % n];
    }
    return d;
}

Polygon translate(const Polygon& poly, Point offset) {
    std::vector<Point> out(poly.nodes().begin(), poly.nodes().end());
    for (auto& p : out) p += offset;
    return Polygon(std::move(out));
}

Polygon scale(const Polygon& poly, double su, double sv) {
    std::vector<Point> out(poly.nodes().begin(), poly.nodes().end());
    for (auto& p : out) p = {p.u * su, p.v * sv};
    return Polygon(std::move(out));
}

Polygon circle(Point center, double radius, int L) {
    if (L < 3) throw std::invalid_argument("circle: L must be >= 3");
    std::vector<Point> out;
    out.reserve(static_cast<std::size_t>(L));
    for (int k = 0; k < L; ++k) {
        const double th = 2.0 * std::numbers::pi * k / L;
        out.push_back({center.u + radius * std::cos(th), center.v + radius * std::sin(th)});
    }
    return Polygon(std::move(out));
}

Bounds bounds(const Polygon& poly) {
    Bounds b{poly[0].u, poly[0].v, poly[0].u, poly[0].v};
    for (const auto& p : poly.nodes()) {
        b.min_u = std::min(b.min_u, p.u);
        b.min_v = std::min(b.min_v, p.v);
        b.max_u = std::max(b.max_u, p.u);
        b.max_v = std::max(b.max_v, p.v);
    }
    return b;
}

std::string polygon_to_json(const Polygon& poly) {
    nlohmann::json j;
    auto& arr = j["nodes"] = nlohmann::json::array();
    for (const auto& p : poly.nodes()) arr.push_back({p.u, p.v});
    return j.dump();
}

Polygon polygon_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("polygon json: ") + e.what());
    }
    if (!j.is_object() || !j.contains("nodes") || !j["nodes"].is_array()) {
        throw std::invalid_argument("polygon json: expected {\"nodes\": [[u, v], ...]}");
    }
    std::vector<Point> nodes;
    for (const auto& e : j["nodes"]) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
            throw std::invalid_argument("polygon json: each node must be [u, v]");
        }
        nodes.push_back({e[0].get<double>(), e[1].get<double>()});
    }
    return Polygon(std::move(nodes));
}

void write_polygon(const std::string& path, const Polygon& poly) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << polygon_to_json(poly) << '\n';
    if (!os) throw std::runtime_error("write failed: " + path);
}

Polygon read_polygon(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    try {
        return polygon_from_json(ss.str());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
}

}  // namespace acmseg
