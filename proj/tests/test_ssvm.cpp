#include <gtest/gtest.h>

#include <random>

#include "acmseg/ssvm.hpp"
#include "oracles.hpp"

using namespace acmseg;

namespace {

Polygon rect(double u0, double v0, double u1, double v1) { return Polygon({{u0, v0}, {u1, v0}, {u1, v1}, {u0, v1}}); }

double grid_sum(const Grid& g) {
    double s = 0.0;
    for (double x : g.data) s += x;
    return s;
}

}  // namespace

TEST(TaskLoss, PerfectDisjointAndPartial) {
    const Mask a = rasterize(rect(0.5, 0.5, 8.5, 8.5), 20, 20);
    const Mask b = rasterize(rect(10.5, 10.5, 15.5, 15.5), 20, 20);
    const Mask c = rasterize(rect(4.5, 0.5, 12.5, 8.5), 20, 20);
    EXPECT_DOUBLE_EQ(task_loss(a, a), 0.0);
    EXPECT_DOUBLE_EQ(task_loss(a, b), 1.0);
    EXPECT_DOUBLE_EQ(task_loss(a, c), 1.0 - oracle::iou(a, c));
    EXPECT_THROW(task_loss(a, Mask(19, 20)), std::invalid_argument);
}

TEST(AugmentedKappa, SignsByHand) {
    // 20 x 20 = 400 pixels of ground truth inside a 30 x 30 frame.
    const Mask gt = rasterize(rect(4.5, 4.5, 24.5, 24.5), 30, 30);
    ASSERT_EQ(gt.count(), 400u);
    const Grid k(30, 30, 0.25);
    const Grid aug = augmented_kappa(k, gt, 2.0);
    EXPECT_DOUBLE_EQ(aug(10, 10), 0.25 + 2.0 / 400);
    EXPECT_DOUBLE_EQ(aug(0, 0), 0.25 - 2.0 / 400);
    EXPECT_EQ(augmented_kappa(k, gt, 0.0), k);
    EXPECT_THROW(augmented_kappa(k, Mask(30, 30), 1.0), std::invalid_argument);
}

TEST(LossAugmented, ZeroScaleEqualsPlainInference) {
    std::mt19937_64 rng(31);
    const PriorMaps maps = oracle::random_maps(rng, 48, 48);
    const Mask gt = rasterize(circle({20, 24}, 9, 30), 48, 48);
    AcmOptions o;
    o.max_iters = 40;
    o.L = 30;
    SsvmConfig cfg;
    cfg.loss_scale = 0.0;
    const auto r = loss_augmented_infer(maps, gt, o, cfg);
    const auto plain = infer_multi(maps, o);
    EXPECT_EQ(r.poly, plain[r.init_index].poly);
    // The winner maximises -E, i.e. has the lowest energy.
    EXPECT_EQ(r.init_index, select_best_unsupervised(plain));
}

TEST(LossAugmented, EmptyGroundTruthThrows) {
    EXPECT_THROW(loss_augmented_infer(PriorMaps::zeros(16, 16), Mask(16, 16), AcmOptions{}, SsvmConfig{}),
                 std::invalid_argument);
}

TEST(LossAugmented, FullFrameGroundTruthRaisesKappa) {
    // a = -1/|gt| everywhere, so kappa_aug = kappa + loss_scale/|gt|: a uniform
    // increase, under which the contour cannot grow beyond the plain run.
    std::mt19937_64 rng(32);
    int checked = 0;
    for (int t = 0; t < 6; ++t) {
        const PriorMaps maps = oracle::random_maps(rng, 32, 32);
        Mask gt(32, 32);
        std::fill(gt.bits.begin(), gt.bits.end(), 1);
        const Grid aug = augmented_kappa(maps.kappa(), gt, 50.0);
        for (std::size_t i = 0; i < aug.size(); ++i) EXPECT_GT(aug.data[i], maps.kappa().data[i]);
        AcmOptions o;
        o.max_iters = 60;
        o.L = 24;
        const Polygon init = circle({16, 16}, 6, 24);
        const auto plain = evolve(init, maps, o);
        const auto augd = evolve(init, maps.with_kappa(aug), o);
        EXPECT_LE(rasterize(augd.final, 32, 32).count(), rasterize(plain.final, 32, 32).count() + 2);
        ++checked;
    }
    EXPECT_EQ(checked, 6);
}

TEST(EnergyMapGrads, SumsAndExactness) {
    std::mt19937_64 rng(33);
    const PriorMaps maps = oracle::random_maps(rng, 40, 40);
    const Polygon p = oracle::random_star(rng, 20, 20, 5, 14, 25);
    const MapGrads g = energy_map_grads(p, maps);
    EXPECT_NEAR(grid_sum(g.g_kappa), static_cast<double>(rasterize(p, 40, 40).count()), 1e-12);
    EXPECT_NEAR(grid_sum(g.g_d), 25.0, 1e-10);

    // E is linear in every map for a fixed polygon: a one-cell change of size
    // eps moves E by exactly eps * grad.
    std::uniform_int_distribution<int> cell(0, 40 * 40 - 1);
    const double eps = 0.5;
    for (int t = 0; t < 100; ++t) {
        const int which = t % 4;
        const auto idx = static_cast<std::size_t>(cell(rng));
        Grid m[4] = {maps.d(), maps.alpha(), maps.beta(), maps.kappa()};
        m[which].data[idx] += eps;
        const double de = energy(p, PriorMaps(m[0], m[1], m[2], m[3])) - energy(p, maps);
        const Grid* gg[4] = {&g.g_d, &g.g_alpha, &g.g_beta, &g.g_kappa};
        const double want = eps * gg[which]->data[idx];
        EXPECT_LE(std::abs(de - want), 1e-6 * std::max({std::abs(de), std::abs(want), 1e-6})) << "map " << which;
    }
}

TEST(Hinge, ZeroForGroundTruthAndClamped) {
    std::mt19937_64 rng(34);
    const PriorMaps maps = oracle::random_maps(rng, 40, 40);
    const Polygon gt = oracle::random_star(rng, 20, 20, 5, 12, 30);
    const Mask gm = rasterize(gt, 40, 40);
    EXPECT_DOUBLE_EQ(hinge(gt, gt, maps, gm), 0.0);
    EXPECT_FALSE(subgradient(gt, gt, maps, gm).has_value());
    EXPECT_FALSE(subgradient(gt, gt, maps, gm, MarginRule::literal).has_value());

    // A prediction sitting in a very high-energy region: margin satisfied.
    Grid d = maps.d();
    const Polygon far = circle({8, 8}, 3, 12);
    for (int v = 0; v < 16; ++v)
        for (int u = 0; u < 16; ++u) d(u, v) = 1e4;
    const PriorMaps high(d, maps.alpha(), maps.beta(), maps.kappa());
    EXPECT_DOUBLE_EQ(hinge(gt, far, high, gm), 0.0);
}

TEST(Hinge, MatchesTermByTermOracle) {
    std::mt19937_64 rng(35);
    for (int t = 0; t < 30; ++t) {
        const PriorMaps maps = oracle::random_maps(rng, 32, 32);
        const Polygon gt = oracle::random_star(rng, 16, 16, 4, 10, 20);
        const Polygon yh = oracle::random_star(rng, 14, 18, 3, 12, 20);
        const Mask gm = oracle::rasterize(gt, 32, 32);
        const double delta = 1.0 - oracle::iou(gm, oracle::rasterize(yh, 32, 32));
        const double want = std::max(0.0, delta + oracle::energy(gt, maps) - oracle::energy(yh, maps));
        EXPECT_NEAR(hinge(gt, yh, maps, gm), want, 1e-9);
    }
}

TEST(Subgradient, KappaPartIsMaskDifference) {
    // Zero maps give E = 0 for every contour, so any delta > 0 violates the margin.
    const PriorMaps maps = PriorMaps::zeros(40, 40);
    const Polygon gt = circle({20, 20}, 10, 30);
    const Polygon yh = circle({24, 22}, 6, 30);
    const Mask gm = rasterize(gt, 40, 40), hm = rasterize(yh, 40, 40);
    const auto sg = subgradient(gt, yh, maps, gm);
    ASSERT_TRUE(sg.has_value());
    for (int v = 0; v < 40; ++v)
        for (int u = 0; u < 40; ++u) EXPECT_EQ(sg->g_kappa(u, v), double(gm.at(u, v)) - double(hm.at(u, v)));
}

TEST(Subgradient, CaseSplitFollowsRule) {
    std::mt19937_64 rng(37);
    int violated = 0, satisfied = 0;
    for (int t = 0; t < 60; ++t) {
        const PriorMaps maps = oracle::random_maps(rng, 32, 32);
        const Polygon gt = oracle::random_star(rng, 16, 16, 4, 10, 16);
        const Polygon yh = oracle::random_star(rng, 16, 16, 3, 12, 16);
        const Mask gm = rasterize(gt, 32, 32);
        const HingeTerms h = hinge_terms(gt, yh, maps, gm);
        const auto sg = subgradient(gt, yh, maps, gm, MarginRule::hinge);
        EXPECT_EQ(sg.has_value(), h.value() > 0.0);
        const auto sl = subgradient(gt, yh, maps, gm, MarginRule::literal);
        EXPECT_EQ(sl.has_value(), h.e_gt - h.e_hat < h.delta);
        (sg ? violated : satisfied)++;
        if (sg) {
            MapGrads want = energy_map_grads(gt, maps);
            want -= energy_map_grads(yh, maps);
            EXPECT_EQ(sg->g_d, want.g_d);
            EXPECT_EQ(sg->g_kappa, want.g_kappa);
        }
    }
    EXPECT_GT(violated, 0);
    EXPECT_GT(satisfied, 0);
}

TEST(MapGradsOps, Arithmetic) {
    MapGrads a = MapGrads::zeros(3, 3), b = MapGrads::zeros(3, 3);
    EXPECT_TRUE(a.is_zero());
    b.g_beta(1, 1) = 2.0;
    a += b;
    a *= 3.0;
    EXPECT_DOUBLE_EQ(a.g_beta(1, 1), 6.0);
    a -= b;
    EXPECT_DOUBLE_EQ(a.g_beta(1, 1), 4.0);
    EXPECT_THROW(a += MapGrads::zeros(2, 3), std::invalid_argument);
}
