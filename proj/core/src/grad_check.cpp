#include "acmseg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "acmseg/acm.hpp"
#include "acmseg/backbone.hpp"
#include "acmseg/ssvm.hpp"

namespace acmseg {

double relative_error(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

bool GradCheckReport::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::string GradCheckReport::first_failure() const {
    for (const auto& e : entries)
        if (!e.passed) return e.name;
    return {};
}

std::string GradCheckReport::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["passed"] = passed();
    j["checks"] = nlohmann::json::array();
    for (const auto& e : entries) {
        j["checks"].push_back({{"name", e.name},
                               {"max_rel_error", e.max_rel_error},
                               {"threshold", e.threshold},
                               {"samples", e.samples},
                               {"passed", e.passed}});
    }
    return j.dump(2);
}

namespace {

double dot_maps(const MapGrads& w, const PriorMaps& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.g_d.data.size(); ++i) {
        s += w.g_d.data[i] * m.d().data[i] + w.g_alpha.data[i] * m.alpha().data[i] +
             w.g_beta.data[i] * m.beta().data[i] + w.g_kappa.data[i] * m.kappa().data[i];
    }
    return s;
}

// Low-frequency maps with positive alpha and beta and constant kappa.
PriorMaps smooth_maps(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ph(0.0, 6.283185307179586);
    const double p[4] = {ph(rng), ph(rng), ph(rng), ph(rng)};
    Grid d(size, size), a(size, size), b(size, size), k(size, size);
    for (int v = 0; v < size; ++v) {
        for (int u = 0; u < size; ++u) {
            d(u, v) = std::sin(u / 7.0 + p[0]) * std::cos(v / 9.0 + p[1]);
            a(u, v) = 0.05 + 0.03 * std::sin(u / 11.0 + v / 13.0 + p[2]);
            b(u, v) = 0.02 + 0.01 * std::cos(u / 10.0 - v / 8.0 + p[3]);
            k(u, v) = -0.3;
        }
    }
    return PriorMaps(std::move(d), std::move(a), std::move(b), std::move(k));
}

// A jittered circle whose nodes stay clear of grid lines, where the bilinear
// maps have kinks and central differences would straddle two cells.
Polygon test_polygon(int size, std::mt19937_64& rng, int L) {
    std::uniform_real_distribution<double> j(-0.6, 0.6);
    std::vector<Point> pts;
    const double c = size / 2.0, r = size * 0.3;
    for (int s = 0; s < L; ++s) {
        const double t = 6.283185307179586 * s / L;
        Point p{c + r * std::cos(t) + j(rng), c + r * std::sin(t) + j(rng)};
        for (double* x : {&p.u, &p.v}) {
            const double f = *x - std::floor(*x);
            if (f < 0.01) *x += 0.02;
            if (f > 0.99) *x -= 0.02;
        }
        pts.push_back(p);
    }
    return Polygon(std::move(pts));
}

double smooth_energy(const Polygon& poly, const PriorMaps& maps) {
    const EnergyTerms t = energy_terms(poly, maps);
    return t.data + t.membrane + t.thin_plate;
}

}  // namespace

GradCheckEntry check_backbone_grad(const GradCheckOptions& opts) {
    const ArchConfig arch = ArchConfig::tiny();
    std::mt19937_64 rng(opts.seed);
    const BackboneParams params = init_params(arch, opts.seed);
    Image img(arch.input_size, arch.input_size);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (double& x : img.data) x = unit(rng);
    MapGrads w = MapGrads::zeros(arch.input_size, arch.input_size);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Grid* g : {&w.g_d, &w.g_alpha, &w.g_beta, &w.g_kappa})
        for (double& x : g->data) x = normal(rng);

    const ForwardResult fr = forward(params, img);
    BackboneParams grad = backward(params, *fr.cache, w);
    if (opts.inject_sign_flip) grad.axpy(-2.0, grad);

    std::vector<std::pair<std::size_t, std::size_t>> index;
    for (std::size_t t = 0; t < params.tensors.size(); ++t)
        for (std::size_t i = 0; i < params.tensors[t].numel(); ++i) index.emplace_back(t, i);
    std::shuffle(index.begin(), index.end(), rng);
    const std::size_t n = std::min(index.size(), static_cast<std::size_t>(opts.backbone_samples));

    GradCheckEntry e{"backbone", 0.0, 1e-3, static_cast<int>(n), false};
    BackboneParams p = params;
    const double h = opts.backbone_h;
    for (std::size_t k = 0; k < n; ++k) {
        const auto [t, i] = index[k];
        double& x = p.tensors[t].data[i];
        const double x0 = x;
        x = x0 + h;
        const double fp = dot_maps(w, predict(p, img));
        x = x0 - h;
        const double fm = dot_maps(w, predict(p, img));
        x = x0;
        e.max_rel_error = std::max(e.max_rel_error, relative_error(grad.tensors[t].data[i], (fp - fm) / (2.0 * h)));
    }
    e.passed = e.max_rel_error < e.threshold;
    return e;
}

GradCheckEntry check_acm_node_grad(std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0xacull);
    constexpr int kSize = 64;
    constexpr double kH = 1e-3;
    const AcmOptions opts;
    const PriorMaps maps = smooth_maps(kSize, rng);
    const Polygon poly = test_polygon(kSize, rng, 40);
    const auto g = node_grad(poly, maps, opts.balloon_h);

    GradCheckEntry e{"acm_node_grad", 0.0, 1e-3, static_cast<int>(2 * poly.size()), false};
    std::vector<Point> pts(poly.nodes().begin(), poly.nodes().end());
    const auto at = [&](std::size_t s, Point delta) {
        auto q = pts;
        q[s] += delta;
        return Polygon(std::move(q));
    };
    for (std::size_t s = 0; s < pts.size(); ++s) {
        for (int axis = 0; axis < 2; ++axis) {
            const Point dh = axis == 0 ? Point{kH, 0.0} : Point{0.0, kH};
            const Point db = axis == 0 ? Point{opts.balloon_h, 0.0} : Point{0.0, opts.balloon_h};
            const double smooth = (smooth_energy(at(s, dh), maps) - smooth_energy(at(s, -1.0 * dh), maps)) / (2.0 * kH);
            const double balloon = (region_sum(maps.kappa(), at(s, db)) - region_sum(maps.kappa(), at(s, -1.0 * db))) /
                                   (2.0 * opts.balloon_h);
            const double analytic = axis == 0 ? g[s].u : g[s].v;
            e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic, smooth + balloon));
        }
    }
    e.passed = e.max_rel_error < e.threshold;
    return e;
}

GradCheckEntry check_energy_map_grad(std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x3a9ull);
    constexpr int kSize = 48;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Grid d(kSize, kSize), a(kSize, kSize), b(kSize, kSize), k(kSize, kSize);
    for (std::size_t i = 0; i < d.data.size(); ++i) {
        d.data[i] = unit(rng) * 2.0 - 1.0;
        a.data[i] = unit(rng);
        b.data[i] = unit(rng);
        k.data[i] = unit(rng) - 0.5;
    }
    const PriorMaps maps(d, a, b, k);
    const Polygon poly = test_polygon(kSize, rng, 30);
    const MapGrads g = energy_map_grads(poly, maps);
    const double e0 = energy(poly, maps);

    GradCheckEntry e{"energy_map_grad", 0.0, 1e-6, 0, false};
    constexpr double kEps = 0.5;
    for (int which = 0; which < 4; ++which) {
        const Grid& gm = which == 0 ? g.g_d : which == 1 ? g.g_alpha : which == 2 ? g.g_beta : g.g_kappa;
        for (std::size_t i = 0; i < gm.data.size(); ++i) {
            Grid m[4] = {maps.d(), maps.alpha(), maps.beta(), maps.kappa()};
            m[which].data[i] += kEps;
            const double e1 = energy(poly, PriorMaps(m[0], m[1], m[2], m[3]));
            e.max_rel_error = std::max(e.max_rel_error, relative_error(gm.data[i], (e1 - e0) / kEps));
            ++e.samples;
        }
    }
    e.passed = e.max_rel_error < e.threshold;
    return e;
}

GradCheckReport run_grad_checks(const GradCheckOptions& opts) {
    GradCheckReport r;
    r.seed = opts.seed;
    r.entries.push_back(check_backbone_grad(opts));
    r.entries.push_back(check_acm_node_grad(opts.seed));
    r.entries.push_back(check_energy_map_grad(opts.seed));
    return r;
}

}  // namespace acmseg
