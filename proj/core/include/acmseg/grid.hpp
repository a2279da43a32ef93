#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace acmseg {

// Dense row-major scalar field; element (u, v) lives at v * width + u.
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Grid() = default;
    Grid(int w, int h, double fill = 0.0) : width(w), height(h) {
        if (w < 1 || h < 1) throw std::invalid_argument("grid dimensions must be positive");
        data.assign(static_cast<std::size_t>(w) * h, fill);
    }

    double& operator()(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
    double operator()(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Grid& o) const { return width == o.width && height == o.height; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

}  // namespace acmseg
