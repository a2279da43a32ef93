#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace acmseg {

template <typename Fn>
void for_each_span(const Polygon& poly, int width, int height, Fn&& fn) {
    const auto nodes = poly.nodes();
    const std::size_t n = nodes.size();
    double min_v = nodes[0].v, max_v = nodes[0].v;
    for (const auto& p : nodes) {
        min_v = std::min(min_v, p.v);
        max_v = std::max(max_v, p.v);
    }
    const int v_lo = std::max(0, static_cast<int>(std::ceil(std::max(min_v, -1.0))));
    const int v_hi = std::min(height - 1, static_cast<int>(std::floor(std::min(max_v, static_cast<double>(height)))));

    // Edge (a, b) crosses row v iff min(a.v, b.v) <= v < max(a.v, b.v), so
    // each edge only visits its own rows.
    thread_local std::vector<std::pair<int, double>> hits;
    hits.clear();
    for (std::size_t i = 0; i < n; ++i) {
        const Point& a = nodes[i];
        const Point& b = nodes[(i + 1) % n];
        if (a.v == b.v) continue;
        const int r0 = std::max(v_lo, static_cast<int>(std::ceil(std::min(a.v, b.v))));
        const int r1 = std::min(v_hi, static_cast<int>(std::ceil(std::max(a.v, b.v))) - 1);
        for (int v = r0; v <= r1; ++v) {
            const double vy = v;
            hits.emplace_back(v, (b.u - a.u) * (vy - a.v) / (b.v - a.v) + a.u);
        }
    }
    std::sort(hits.begin(), hits.end());

    for (std::size_t r = 0; r < hits.size();) {
        const int v = hits[r].first;
        std::size_t e = r;
        while (e < hits.size() && hits[e].first == v) ++e;
        // A pixel is inside iff an odd number of crossings satisfy u < x,
        // i.e. x[2k] <= u < x[2k+1].
        for (std::size_t k = r; k + 1 < e; k += 2) {
            const double lo = std::clamp(std::ceil(hits[k].second), 0.0, static_cast<double>(width));
            const double hi = std::clamp(std::ceil(hits[k + 1].second), 0.0, static_cast<double>(width));
            const int ub = static_cast<int>(lo);
            const int ue = static_cast<int>(hi);
            if (ub < ue) fn(v, ub, ue);
        }
        r = e;
    }
}

}  // namespace acmseg
