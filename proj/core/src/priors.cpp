#include "acmseg/priors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "acmseg/image.hpp"

namespace acmseg {

namespace {

void check_finite(const Grid& g, const char* name) {
    for (double x : g.data) {
        if (!std::isfinite(x)) throw std::invalid_argument(std::string("prior map ") + name + " has non-finite values");
    }
}

void check_nonneg(const Grid& g, const char* name) {
    for (double x : g.data) {
        if (x < 0.0) throw std::invalid_argument(std::string("prior map ") + name + " must be non-negative");
    }
}

// Cell origin and fractional offset along one axis, after clamping.
struct Axis {
    int i0;
    int i1;
    double t;
    bool clamped;
};

Axis locate(double x, int n) {
    Axis a{0, 0, 0.0, false};
    const double hi = n - 1;
    double xc = x;
    if (x < 0.0) {
        xc = 0.0;
        a.clamped = true;
    } else if (x > hi) {
        xc = hi;
        a.clamped = true;
    }
    if (n == 1) return a;
    a.i0 = std::min(static_cast<int>(std::floor(xc)), n - 2);
    a.i1 = a.i0 + 1;
    a.t = xc - a.i0;
    return a;
}

}  // namespace

PriorMaps::PriorMaps(Grid d, Grid alpha, Grid beta, Grid kappa)
    : d_(std::move(d)), alpha_(std::move(alpha)), beta_(std::move(beta)), kappa_(std::move(kappa)) {
    if (d_.width < 1 || d_.height < 1) throw std::invalid_argument("prior maps must be non-empty");
    if (!d_.same_shape(alpha_) || !d_.same_shape(beta_) || !d_.same_shape(kappa_)) {
        throw std::invalid_argument("prior maps must share dimensions");
    }
    check_finite(d_, "D");
    check_finite(alpha_, "alpha");
    check_finite(beta_, "beta");
    check_finite(kappa_, "kappa");
    check_nonneg(alpha_, "alpha");
    check_nonneg(beta_, "beta");
}

PriorMaps PriorMaps::zeros(int width, int height) {
    return PriorMaps(Grid(width, height), Grid(width, height), Grid(width, height), Grid(width, height));
}

PriorMaps PriorMaps::with_kappa(Grid kappa) const { return PriorMaps(d_, alpha_, beta_, std::move(kappa)); }

BilinearStencil bilinear_stencil(const Grid& map, Point p) {
    const Axis au = locate(p.u, map.width);
    const Axis av = locate(p.v, map.height);
    const auto idx = [&](int u, int v) { return static_cast<std::size_t>(v) * map.width + u; };
    return BilinearStencil{
        {idx(au.i0, av.i0), idx(au.i1, av.i0), idx(au.i0, av.i1), idx(au.i1, av.i1)},
        {(1 - au.t) * (1 - av.t), au.t * (1 - av.t), (1 - au.t) * av.t, au.t * av.t},
    };
}

Sampled sample(const Grid& map, Point p) {
    const Axis au = locate(p.u, map.width);
    const Axis av = locate(p.v, map.height);
    const double f00 = map(au.i0, av.i0);
    const double f10 = map(au.i1, av.i0);
    const double f01 = map(au.i0, av.i1);
    const double f11 = map(au.i1, av.i1);
    const double s = au.t, t = av.t;
    Sampled out;
    out.value = (1 - s) * (1 - t) * f00 + s * (1 - t) * f10 + (1 - s) * t * f01 + s * t * f11;
    out.grad.u = (au.clamped || map.width == 1) ? 0.0 : (1 - t) * (f10 - f00) + t * (f11 - f01);
    out.grad.v = (av.clamped || map.height == 1) ? 0.0 : (1 - s) * (f01 - f00) + s * (f11 - f10);
    return out;
}

double region_sum(const Grid& kappa, const Polygon& poly) {
    double sum = 0.0;
    for_each_span(poly, kappa.width, kappa.height, [&](int v, int ub, int ue) {
        const double* row = kappa.data.data() + static_cast<std::size_t>(v) * kappa.width;
        for (int u = ub; u < ue; ++u) sum += row[u];
    });
    return sum;
}

void dump_maps(const PriorMaps& maps, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json ranges;
    const std::pair<const char*, const Grid*> entries[] = {
        {"d", &maps.d()}, {"alpha", &maps.alpha()}, {"beta", &maps.beta()}, {"kappa", &maps.kappa()}};
    for (const auto& [name, grid] : entries) {
        const auto [lo_it, hi_it] = std::minmax_element(grid->data.begin(), grid->data.end());
        const double lo = *lo_it, hi = *hi_it;
        std::vector<std::uint8_t> gray(grid->size());
        const double span = hi - lo;
        for (std::size_t i = 0; i < gray.size(); ++i) {
            const double x = span > 0.0 ? (grid->data[i] - lo) / span : 0.0;
            gray[i] = static_cast<std::uint8_t>(std::lround(x * 255.0));
        }
        write_png_gray((std::filesystem::path(dir) / (std::string(name) + ".png")).string(), grid->width,
                       grid->height, gray);
        ranges[name] = {{"min", lo}, {"max", hi}};
    }
    std::ofstream os(std::filesystem::path(dir) / "ranges.json");
    if (!os) throw std::runtime_error("cannot write ranges.json in " + dir);
    os << ranges.dump(2) << '\n';
}

}  // namespace acmseg
