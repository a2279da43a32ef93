#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "acmseg/geometry.hpp"
#include "oracles.hpp"

using namespace acmseg;

namespace {

Polygon square(double a, double b) { return Polygon({{a, a}, {b, a}, {b, b}, {a, b}}); }

Polygon rotate_order(const Polygon& p, std::size_t k) {
    std::vector<Point> pts;
    for (std::size_t i = 0; i < p.size(); ++i) pts.push_back(p[(i + k) % p.size()]);
    return Polygon(std::move(pts));
}

}  // namespace

TEST(Polygon, RejectsTooFewOrNonFiniteNodes) {
    EXPECT_THROW(Polygon({{0, 0}, {1, 1}}), std::invalid_argument);
    EXPECT_THROW(Polygon({{0, 0}, {1, 1}, {NAN, 2}}), std::invalid_argument);
    EXPECT_THROW(Polygon({{0, 0}, {1, 1}, {INFINITY, 2}}), std::invalid_argument);
}

TEST(Rasterize, SmallSquareCoversFourCenters) {
    const Mask m = rasterize(square(0.5, 2.5), 4, 4);
    EXPECT_EQ(m.count(), 4u);
    EXPECT_TRUE(m.at(1, 1) && m.at(1, 2) && m.at(2, 1) && m.at(2, 2));
}

TEST(Rasterize, OutsideAndDegeneratePolygonsAreEmpty) {
    EXPECT_EQ(rasterize(square(20.5, 30.5), 8, 8).count(), 0u);
    EXPECT_EQ(rasterize(square(-30.5, -20.5), 8, 8).count(), 0u);
    EXPECT_EQ(rasterize(Polygon({{1, 1}, {5, 5}, {3, 3}}), 8, 8).count(), 0u);
}

TEST(Rasterize, MatchesPointInPolygonOracle) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 200; ++t) {
        const int w = 8 + static_cast<int>(rng() % 40), h = 8 + static_cast<int>(rng() % 40);
        const Polygon p = t % 2 ? oracle::random_polygon(rng, -5.0, std::max(w, h) + 5.0, 3 + t % 9)
                                : oracle::random_star(rng, w / 2.0, h / 2.0, 2.0, std::min(w, h) * 0.6, 5 + t % 30);
        EXPECT_EQ(rasterize(p, w, h), oracle::rasterize(p, w, h)) << "trial " << t;
    }
}

TEST(Rasterize, SpansAgreeWithMask) {
    std::mt19937_64 rng(9);
    const Polygon p = oracle::random_polygon(rng, -3.0, 35.0, 11);
    Mask spans(32, 30);
    for_each_span(p, 32, 30, [&](int v, int u0, int u1) {
        for (int u = u0; u < u1; ++u) spans.set(u, v, true);
    });
    EXPECT_EQ(spans, rasterize(p, 32, 30));
}

TEST(Rasterize, InvariantUnderCyclicRotation) {
    std::mt19937_64 rng(3);
    const Polygon p = oracle::random_polygon(rng, 0.0, 30.0, 9);
    const Mask ref = rasterize(p, 32, 32);
    for (std::size_t k = 1; k < p.size(); ++k) EXPECT_EQ(rasterize(rotate_order(p, k), 32, 32), ref);
}

TEST(Iou, BasicValues) {
    const Mask a = rasterize(square(0.5, 4.5), 10, 10);
    const Mask b = rasterize(square(5.5, 8.5), 10, 10);
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(iou(a, b), 0.0);
    EXPECT_DOUBLE_EQ(iou(Mask(10, 10), Mask(10, 10)), 1.0);
    EXPECT_THROW(iou(Mask(10, 10), Mask(9, 10)), std::invalid_argument);
}

TEST(Iou, OverlappingRectanglesMatchPixelCount) {
    const Mask a = rasterize(Polygon({{0.5, 0.5}, {6.5, 0.5}, {6.5, 3.5}, {0.5, 3.5}}), 12, 12);
    const Mask b = rasterize(Polygon({{3.5, 1.5}, {9.5, 1.5}, {9.5, 5.5}, {3.5, 5.5}}), 12, 12);
    // a: 6x3 = 18, b: 6x4 = 24, overlap columns 4..6, rows 2..3 -> 6
    EXPECT_DOUBLE_EQ(iou(a, b), 6.0 / 36.0);
    EXPECT_DOUBLE_EQ(iou(a, b), oracle::iou(a, b));
}

TEST(Iou, SymmetricAndBounded) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 50; ++t) {
        const Mask a = rasterize(oracle::random_polygon(rng, 0, 20, 6), 20, 20);
        const Mask b = rasterize(oracle::random_polygon(rng, 0, 20, 6), 20, 20);
        EXPECT_DOUBLE_EQ(iou(a, b), iou(b, a));
        EXPECT_GE(iou(a, b), 0.0);
        EXPECT_LE(iou(a, b), 1.0);
        EXPECT_DOUBLE_EQ(iou(a, b), oracle::iou(a, b));
    }
}

TEST(Resample, SquareToCorners) {
    const Polygon r = resample(square(0, 4), 4);
    const Polygon s = square(0, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(r[i].u, s[i].u, 1e-12);
        EXPECT_NEAR(r[i].v, s[i].v, 1e-12);
    }
}

TEST(Resample, EqualSpacingAndIdempotentOnSmoothShapes) {
    // Exact on an equilateral input; on a finer polygon the chords of the first
    // pass cut its corners, so a second pass moves nodes by a tiny amount.
    const Polygon reg = circle({20, 20}, 10, 64);
    const Polygon same = resample(reg, 64);
    for (std::size_t i = 0; i < reg.size(); ++i) {
        EXPECT_NEAR(same[i].u, reg[i].u, 1e-9);
        EXPECT_NEAR(same[i].v, reg[i].v, 1e-9);
    }
    const Polygon once = resample(circle({20, 20}, 10, 200), 64);
    const Polygon twice = resample(once, 64);
    for (std::size_t i = 0; i < once.size(); ++i) {
        EXPECT_NEAR(once[i].u, twice[i].u, 1e-3);
        EXPECT_NEAR(once[i].v, twice[i].v, 1e-3);
    }
    const auto d = first_diff(once);
    for (const auto& e : d) EXPECT_NEAR(norm(e), norm(d[0]), 1e-3 * norm(d[0]));
}

TEST(Resample, CirclePerimeterNearAnalytic) {
    const double r = 25.0;
    const Polygon p = resample(circle({50, 50}, r, 500), 64);
    EXPECT_NEAR(perimeter(p), 2 * M_PI * r, 0.005 * 2 * M_PI * r);
}

TEST(Resample, PreservesOrientationAndRejectsZeroPerimeter) {
    const Polygon cw = Polygon({{0, 0}, {0, 5}, {5, 5}, {5, 0}});
    EXPECT_EQ(std::signbit(signed_area(resample(cw, 20))), std::signbit(signed_area(cw)));
    EXPECT_THROW(resample(Polygon({{1, 1}, {1, 1}, {1, 1}}), 8), std::invalid_argument);
    EXPECT_THROW(resample(cw, 2), std::invalid_argument);
}

TEST(Differences, FirstDiffOfUnitSquare) {
    for (const auto& d : first_diff(square(0, 1))) EXPECT_DOUBLE_EQ(squared_norm(d), 1.0);
}

TEST(Differences, FirstDiffTelescopesAndShifts) {
    std::mt19937_64 rng(1);
    const Polygon p = oracle::random_polygon(rng, 0, 50, 13);
    Point sum;
    for (const auto& d : first_diff(p)) sum += d;
    EXPECT_NEAR(sum.u, 0.0, 1e-12);
    EXPECT_NEAR(sum.v, 0.0, 1e-12);
    const auto d = first_diff(p), ds = first_diff(rotate_order(p, 4));
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(ds[i], d[(i + 4) % p.size()]);
}

TEST(Differences, SecondDiffMatchesDirectFormula) {
    std::mt19937_64 rng(2);
    const Polygon p = oracle::random_polygon(rng, 0, 50, 10);
    const auto d2 = second_diff(p);
    const std::size_t L = p.size();
    for (std::size_t s = 0; s < L; ++s) {
        const Point want = p[(s + 1) % L] - 2.0 * p[s] + p[(s + L - 1) % L];
        EXPECT_NEAR(d2[s].u, want.u, 1e-12);
        EXPECT_NEAR(d2[s].v, want.v, 1e-12);
    }
}

TEST(Differences, SecondDiffZeroOnLineAndUniformOnRegularPolygon) {
    // Equally spaced collinear nodes, away from the wrap-around.
    const Polygon line({{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}});
    const auto dl = second_diff(line);
    for (std::size_t s = 1; s + 1 < line.size(); ++s) EXPECT_NEAR(norm(dl[s]), 0.0, 1e-12);
    const auto dc = second_diff(circle({0, 0}, 7, 12));
    for (const auto& d : dc) EXPECT_NEAR(norm(d), norm(dc[0]), 1e-12);
}

TEST(PolygonJson, RoundTrip) {
    std::mt19937_64 rng(4);
    const Polygon p = oracle::random_polygon(rng, -10, 10, 9);
    EXPECT_EQ(polygon_from_json(polygon_to_json(p)), p);
    EXPECT_THROW(polygon_from_json("{\"nodes\": [[0, 0], [1, 1]]}"), std::invalid_argument);
    EXPECT_ANY_THROW(polygon_from_json("not json"));
}
