#include "acmseg/ssvm.hpp"

#include <algorithm>
#include <stdexcept>

namespace acmseg {

MapGrads MapGrads::zeros(int width, int height) {
    return {Grid(width, height), Grid(width, height), Grid(width, height), Grid(width, height)};
}

bool MapGrads::is_zero() const {
    const auto zero = [](const Grid& g) { return std::all_of(g.data.begin(), g.data.end(), [](double x) { return x == 0.0; }); };
    return zero(g_d) && zero(g_alpha) && zero(g_beta) && zero(g_kappa);
}

namespace {

template <typename Op>
void combine(MapGrads& a, const MapGrads& b, Op op) {
    if (!a.g_d.same_shape(b.g_d)) throw std::invalid_argument("MapGrads: shape mismatch");
    Grid* lhs[] = {&a.g_d, &a.g_alpha, &a.g_beta, &a.g_kappa};
    const Grid* rhs[] = {&b.g_d, &b.g_alpha, &b.g_beta, &b.g_kappa};
    for (int k = 0; k < 4; ++k) {
        for (std::size_t i = 0; i < lhs[k]->size(); ++i) lhs[k]->data[i] = op(lhs[k]->data[i], rhs[k]->data[i]);
    }
}

}  // namespace

MapGrads& MapGrads::operator+=(const MapGrads& o) {
    combine(*this, o, [](double x, double y) { return x + y; });
    return *this;
}

MapGrads& MapGrads::operator-=(const MapGrads& o) {
    combine(*this, o, [](double x, double y) { return x - y; });
    return *this;
}

MapGrads& MapGrads::operator*=(double s) {
    for (Grid* g : {&g_d, &g_alpha, &g_beta, &g_kappa})
        for (double& x : g->data) x *= s;
    return *this;
}

void SsvmConfig::validate() const {
    if (!(C > 0.0)) throw std::invalid_argument("ssvm: C must be > 0");
    if (!(loss_scale >= 0.0)) throw std::invalid_argument("ssvm: loss_scale must be >= 0");
}

double task_loss(const Mask& gt, const Mask& pred) { return 1.0 - iou(gt, pred); }

double symmetric_difference_loss(const Mask& gt, const Mask& pred) {
    if (gt.width != pred.width || gt.height != pred.height) {
        throw std::invalid_argument("symmetric_difference_loss: mask dimensions differ");
    }
    const std::size_t n_gt = gt.count();
    if (n_gt == 0) throw std::invalid_argument("symmetric_difference_loss: empty ground truth");
    std::size_t diff = 0;
    for (std::size_t i = 0; i < gt.bits.size(); ++i) diff += gt.bits[i] ^ pred.bits[i];
    return static_cast<double>(diff) / static_cast<double>(n_gt);
}

Grid augmented_kappa(const Grid& kappa, const Mask& gt, double loss_scale) {
    if (kappa.width != gt.width || kappa.height != gt.height) {
        throw std::invalid_argument("augmented_kappa: dimension mismatch");
    }
    const std::size_t n_gt = gt.count();
    if (n_gt == 0) throw std::invalid_argument("loss-augmented inference needs a non-empty ground truth mask");
    const double w = 1.0 / static_cast<double>(n_gt);
    Grid out = kappa;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double a = gt.bits[i] ? -w : w;
        out.data[i] -= loss_scale * a;
    }
    return out;
}

LossAugmentedResult loss_augmented_infer(const PriorMaps& maps, const Mask& gt, const AcmOptions& opts,
                                         const SsvmConfig& cfg, double radius_frac) {
    cfg.validate();
    const PriorMaps aug = maps.with_kappa(augmented_kappa(maps.kappa(), gt, cfg.loss_scale));
    const auto inits = init_polygons(maps.width(), maps.height(), radius_frac, opts.L);
    std::optional<LossAugmentedResult> best;
    for (std::size_t j = 0; j < inits.size(); ++j) {
        auto r = evolve(inits[j], aug, opts);
        const Mask m = rasterize(r.final, gt.width, gt.height);
        const double score = cfg.loss_scale * symmetric_difference_loss(gt, m) - energy(r.final, maps);
        if (!best || score > best->score) best = LossAugmentedResult{std::move(r.final), j, score};
    }
    return std::move(*best);
}

MapGrads energy_map_grads(const Polygon& poly, const PriorMaps& maps) {
    MapGrads g = MapGrads::zeros(maps.width(), maps.height());
    const auto d1 = first_diff(poly);
    const auto d2 = second_diff(poly);
    for (std::size_t s = 0; s < poly.size(); ++s) {
        const BilinearStencil st = bilinear_stencil(maps.d(), poly[s]);
        const double m = squared_norm(d1[s]);
        const double t = squared_norm(d2[s]);
        for (int k = 0; k < 4; ++k) {
            g.g_d.data[st.index[k]] += st.weight[k];
            g.g_alpha.data[st.index[k]] += st.weight[k] * m;
            g.g_beta.data[st.index[k]] += st.weight[k] * t;
        }
    }
    for_each_span(poly, maps.width(), maps.height(), [&](int v, int ub, int ue) {
        double* row = g.g_kappa.data.data() + static_cast<std::size_t>(v) * maps.width();
        std::fill(row + ub, row + ue, 1.0);
    });
    return g;
}

double HingeTerms::value() const { return std::max(0.0, delta + e_gt - e_hat); }

HingeTerms hinge_terms(const Polygon& gt_poly, const Polygon& y_hat, const PriorMaps& maps, const Mask& gt_mask) {
    const Mask pred = rasterize(y_hat, gt_mask.width, gt_mask.height);
    return {task_loss(gt_mask, pred), energy(gt_poly, maps), energy(y_hat, maps)};
}

double hinge(const Polygon& gt_poly, const Polygon& y_hat, const PriorMaps& maps, const Mask& gt_mask) {
    return hinge_terms(gt_poly, y_hat, maps, gt_mask).value();
}

std::optional<MapGrads> subgradient(const Polygon& gt_poly, const Polygon& y_hat, const PriorMaps& maps,
                                    const Mask& gt_mask, MarginRule rule) {
    if (!hinge_terms(gt_poly, y_hat, maps, gt_mask).violated(rule)) return std::nullopt;
    MapGrads g = energy_map_grads(gt_poly, maps);
    g -= energy_map_grads(y_hat, maps);
    return g;
}

}  // namespace acmseg
