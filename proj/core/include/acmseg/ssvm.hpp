#pragma once

#include <optional>
#include <vector>

#include "acmseg/acm.hpp"

namespace acmseg {

// Gradients of a scalar with respect to each of the four prior maps.
struct MapGrads {
    Grid g_d, g_alpha, g_beta, g_kappa;

    static MapGrads zeros(int width, int height);
    int width() const { return g_d.width; }
    int height() const { return g_d.height; }
    bool is_zero() const;

    MapGrads& operator+=(const MapGrads& o);
    MapGrads& operator-=(const MapGrads& o);
    MapGrads& operator*=(double s);
};

// When a sample contributes a subgradient.
//   hinge:   E(y_hat) - E(gt) < delta, i.e. exactly when the hinge is positive.
//   literal: E(gt) - E(y_hat) < delta, the inequality with the energies in
//            the other order; kept for comparison, it stops updating once
//            E(gt) is far above E(y_hat).
enum class MarginRule { hinge, literal };

struct SsvmConfig {
    double C = 1.0;
    double loss_scale = 1.0;  // weight of the task-loss augmentation during inference
    MarginRule margin_rule = MarginRule::hinge;

    void validate() const;
};

// 1 - IoU: zero for a perfect prediction.
double task_loss(const Mask& gt, const Mask& pred);

// |gt xor pred| / |gt|, the per-pixel decomposable surrogate used by
// loss-augmented inference.
double symmetric_difference_loss(const Mask& gt, const Mask& pred);

// kappa - loss_scale * a, with a = +1/|gt| outside gt and -1/|gt| inside.
// Minimising energy on these maps minimises E(y) - loss_scale * surrogate(y)
// up to a constant.
Grid augmented_kappa(const Grid& kappa, const Mask& gt, double loss_scale);

struct LossAugmentedResult {
    Polygon poly;
    std::size_t init_index;
    double score;  // loss_scale * surrogate - E, on the original maps
};

// Most violating contour: evolves all five initialisations on the augmented
// maps and keeps the one with the largest score. Throws on an empty gt.
LossAugmentedResult loss_augmented_infer(const PriorMaps& maps, const Mask& gt, const AcmOptions& opts,
                                         const SsvmConfig& cfg, double radius_frac = kDefaultRadiusFrac);

// dE(poly)/d(maps). E is linear in every map for a fixed polygon, so this is
// a scatter of bilinear weights (times the internal-term magnitudes) and the
// polygon's interior indicator.
MapGrads energy_map_grads(const Polygon& poly, const PriorMaps& maps);

struct HingeTerms {
    double delta;   // task loss between the rasterized gt and prediction
    double e_gt;
    double e_hat;

    double value() const;
    bool violated(MarginRule rule = MarginRule::hinge) const {
        return rule == MarginRule::hinge ? delta + e_gt - e_hat > 0.0 : e_gt - e_hat < delta;
    }
};

HingeTerms hinge_terms(const Polygon& gt_poly, const Polygon& y_hat, const PriorMaps& maps, const Mask& gt_mask);

// max(0, delta + E(gt) - E(y_hat))
double hinge(const Polygon& gt_poly, const Polygon& y_hat, const PriorMaps& maps, const Mask& gt_mask);

// dE(gt)/dmaps - dE(y_hat)/dmaps when the margin is violated, nullopt otherwise.
std::optional<MapGrads> subgradient(const Polygon& gt_poly, const Polygon& y_hat, const PriorMaps& maps,
                                    const Mask& gt_mask, MarginRule rule = MarginRule::hinge);

}  // namespace acmseg
