#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "acmseg/priors.hpp"
#include "oracles.hpp"

using namespace acmseg;

namespace {

Grid planar(int w, int h, double a, double b, double c) {
    Grid g(w, h);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) g(u, v) = a * u + b * v + c;
    return g;
}

}  // namespace

TEST(PriorMaps, ValidatesShapesAndValues) {
    const Grid z(4, 4);
    EXPECT_NO_THROW(PriorMaps(z, z, z, z));
    EXPECT_THROW(PriorMaps(z, Grid(4, 5), z, z), std::invalid_argument);
    Grid neg(4, 4);
    neg(1, 1) = -1e-9;
    EXPECT_THROW(PriorMaps(z, neg, z, z), std::invalid_argument);
    EXPECT_THROW(PriorMaps(z, z, neg, z), std::invalid_argument);
    EXPECT_NO_THROW(PriorMaps(neg, z, z, neg));
    Grid bad(4, 4);
    bad(0, 0) = NAN;
    EXPECT_THROW(PriorMaps(bad, z, z, z), std::invalid_argument);
    EXPECT_THROW(PriorMaps(z, z, z, bad), std::invalid_argument);
}

TEST(Sample, ConstantAndRampMaps) {
    const Sampled c = sample(Grid(10, 10, 3.5), {4.3, 6.1});
    EXPECT_DOUBLE_EQ(c.value, 3.5);
    EXPECT_DOUBLE_EQ(c.grad.u, 0.0);
    EXPECT_DOUBLE_EQ(c.grad.v, 0.0);
    const Sampled r = sample(planar(10, 10, 1, 0, 0), {3.25, 7.9});
    EXPECT_NEAR(r.value, 3.25, 1e-14);
    EXPECT_NEAR(r.grad.u, 1.0, 1e-14);
    EXPECT_NEAR(r.grad.v, 0.0, 1e-14);
}

TEST(Sample, ExactOnPlanarMaps) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> coef(-3, 3), pos(0.0, 14.0);
    for (int t = 0; t < 100; ++t) {
        const double a = coef(rng), b = coef(rng), c = coef(rng);
        const Grid g = planar(15, 15, a, b, c);
        const Point p{pos(rng), pos(rng)};
        const Sampled s = sample(g, p);
        EXPECT_NEAR(s.value, a * p.u + b * p.v + c, 1e-12);
        EXPECT_NEAR(s.grad.u, a, 1e-12);
        EXPECT_NEAR(s.grad.v, b, 1e-12);
    }
}

TEST(Sample, GradientMatchesCentralDifferences) {
    std::mt19937_64 rng(12);
    const Grid g = oracle::random_grid(rng, 20, 20, -1, 1);
    std::uniform_real_distribution<double> pos(0.5, 18.5), frac(0.05, 0.95);
    const double h = 1e-4;
    for (int t = 0; t < 200; ++t) {
        // Stay off cell boundaries, where the bilinear patch is not differentiable.
        const Point p{std::floor(pos(rng)) + frac(rng), std::floor(pos(rng)) + frac(rng)};
        const Sampled s = sample(g, p);
        const double fu = (sample(g, {p.u + h, p.v}).value - sample(g, {p.u - h, p.v}).value) / (2 * h);
        const double fv = (sample(g, {p.u, p.v + h}).value - sample(g, {p.u, p.v - h}).value) / (2 * h);
        EXPECT_LE(std::abs(s.grad.u - fu), 1e-5 * std::max(1.0, std::abs(fu)));
        EXPECT_LE(std::abs(s.grad.v - fv), 1e-5 * std::max(1.0, std::abs(fv)));
        EXPECT_NEAR(s.value, oracle::bilinear(g, p), 1e-12);
    }
}

TEST(Sample, ClampsOutsideWithZeroNormalGradient) {
    const Grid g = planar(8, 6, 2, 3, 1);
    const Sampled left = sample(g, {-4.0, 2.5});
    EXPECT_NEAR(left.value, 0 * 2 + 2.5 * 3 + 1, 1e-12);
    EXPECT_DOUBLE_EQ(left.grad.u, 0.0);
    EXPECT_NEAR(left.grad.v, 3.0, 1e-12);
    const Sampled corner = sample(g, {100.0, 100.0});
    EXPECT_NEAR(corner.value, 7 * 2 + 5 * 3 + 1, 1e-12);
    EXPECT_DOUBLE_EQ(corner.grad.u, 0.0);
    EXPECT_DOUBLE_EQ(corner.grad.v, 0.0);
}

TEST(Stencil, WeightsSumToOneAndReproduceSample) {
    std::mt19937_64 rng(13);
    const Grid g = oracle::random_grid(rng, 9, 7, -2, 2);
    std::uniform_real_distribution<double> pos(-2.0, 11.0);
    for (int t = 0; t < 100; ++t) {
        const Point p{pos(rng), pos(rng)};
        const BilinearStencil st = bilinear_stencil(g, p);
        double wsum = 0.0, val = 0.0;
        for (int k = 0; k < 4; ++k) {
            wsum += st.weight[k];
            val += st.weight[k] * g.data[st.index[k]];
        }
        EXPECT_NEAR(wsum, 1.0, 1e-14);
        EXPECT_NEAR(val, sample(g, p).value, 1e-12);
    }
}

TEST(RegionSum, CountsAndMaskedSums) {
    const Polygon sq({{0.5, 0.5}, {3.5, 0.5}, {3.5, 2.5}, {0.5, 2.5}});
    EXPECT_DOUBLE_EQ(region_sum(Grid(6, 6, 1.0), sq), 6.0);
    EXPECT_DOUBLE_EQ(region_sum(Grid(6, 6, 1.0), Polygon({{0.1, 0.1}, {0.9, 0.1}, {0.5, 0.9}})), 0.0);
    std::mt19937_64 rng(14);
    for (int t = 0; t < 50; ++t) {
        const Grid k = oracle::random_grid(rng, 30, 30, -1, 1);
        const Polygon p = oracle::random_polygon(rng, -2, 32, 3 + t % 10);
        EXPECT_NEAR(region_sum(k, p), oracle::masked_sum(k, oracle::rasterize(p, 30, 30)), 1e-10);
    }
}

TEST(RegionSum, AdditiveOverDisjointPolygons) {
    std::mt19937_64 rng(15);
    const Grid k = oracle::random_grid(rng, 40, 40, -1, 1);
    const Polygon a = oracle::random_star(rng, 10, 10, 3, 8, 12);
    const Polygon b = oracle::random_star(rng, 30, 28, 3, 8, 12);
    std::vector<Point> both(a.nodes().begin(), a.nodes().end());
    // Two disjoint loops joined by a doubled bridge edge; the bridge encloses nothing.
    both.push_back(a[0]);
    for (std::size_t i = 0; i < b.size(); ++i) both.push_back(b[i]);
    both.push_back(b[0]);
    const double sum_ab = region_sum(k, a) + region_sum(k, b);
    EXPECT_NEAR(region_sum(k, Polygon(both)), sum_ab, 1e-10);
}

TEST(DumpMaps, WritesFourPngsAndRanges) {
    const auto dir = std::filesystem::temp_directory_path() / "acmseg_dump_maps_test";
    std::filesystem::remove_all(dir);
    std::mt19937_64 rng(16);
    dump_maps(oracle::random_maps(rng, 12, 10), dir.string());
    for (const char* f : {"d.png", "alpha.png", "beta.png", "kappa.png", "ranges.json"})
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    std::ifstream is(dir / "ranges.json");
    const auto j = nlohmann::json::parse(is);
    for (const char* m : {"d", "alpha", "beta", "kappa"}) {
        ASSERT_TRUE(j.contains(m)) << m;
        EXPECT_LE(j[m]["min"].get<double>(), j[m]["max"].get<double>());
    }
    std::filesystem::remove_all(dir);
}
