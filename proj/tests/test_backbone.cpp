#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "acmseg/backbone.hpp"
#include "acmseg/grad_check.hpp"

using namespace acmseg;

namespace {

Image random_image(int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(size, size);
    for (auto& x : img.data) x = u(rng);
    return img;
}

MapGrads random_map_grads(int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    MapGrads g = MapGrads::zeros(size, size);
    for (Grid* m : {&g.g_d, &g.g_alpha, &g.g_beta, &g.g_kappa})
        for (auto& x : m->data) x = n(rng);
    return g;
}

double objective(const PriorMaps& m, const MapGrads& g) {
    double s = 0.0;
    const std::pair<const Grid*, const Grid*> pairs[] = {
        {&m.d(), &g.g_d}, {&m.alpha(), &g.g_alpha}, {&m.beta(), &g.g_beta}, {&m.kappa(), &g.g_kappa}};
    for (const auto& [a, b] : pairs)
        for (std::size_t i = 0; i < a->size(); ++i) s += a->data[i] * b->data[i];
    return s;
}

ArchConfig small_arch() {
    ArchConfig a;
    a.encoder_levels = 3;
    a.decoder_levels = 2;
    a.base_channels = 4;
    a.max_channels = 8;
    a.input_size = 16;
    a.head_hidden1 = 12;
    a.head_hidden2 = 6;
    return a;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(ArchConfig, ValidatesAndReportsChannels) {
    EXPECT_NO_THROW(ArchConfig::desk().validate());
    EXPECT_NO_THROW(ArchConfig::tiny().validate());
    EXPECT_NO_THROW(ArchConfig::paper().validate());
    ArchConfig a;
    a.encoder_levels = 1;
    EXPECT_THROW(a.validate(), std::invalid_argument);
    a = ArchConfig::desk();
    a.input_size = 100;  // not divisible by 16
    EXPECT_THROW(a.validate(), std::invalid_argument);
    a = ArchConfig::desk();
    EXPECT_EQ(a.channels(0), 16);
    EXPECT_EQ(a.channels(3), 128);
    EXPECT_EQ(a.channels(4), 128);
    EXPECT_EQ(a.head_input_channels(), 128 + 64 + 32 + 16);
}

TEST(Forward, ShapesPositivityAndDeterminism) {
    const ArchConfig a = small_arch();
    const auto p = init_params(a, 3);
    const Image img = random_image(16, 1);
    const auto r1 = forward(p, img);
    const auto r2 = forward(p, img);
    EXPECT_EQ(r1.maps.width(), 16);
    EXPECT_EQ(r1.maps.height(), 16);
    EXPECT_EQ(r1.maps.d(), r2.maps.d());
    EXPECT_EQ(r1.maps.kappa(), r2.maps.kappa());
    for (double x : r1.maps.alpha().data) EXPECT_GT(x, 0.0);
    for (double x : r1.maps.beta().data) EXPECT_GT(x, 0.0);
    EXPECT_THROW(forward(p, random_image(32, 1)), std::invalid_argument);
}

TEST(Backward, ZeroMapGradsGiveZeroGradients) {
    const auto p = init_params(small_arch(), 4);
    const auto r = forward(p, random_image(16, 2));
    const auto g = backward(p, *r.cache, MapGrads::zeros(16, 16));
    EXPECT_DOUBLE_EQ(g.squared_norm(), 0.0);
}

TEST(Backward, RejectsStaleCache) {
    auto p = init_params(small_arch(), 5);
    const auto r = forward(p, random_image(16, 3));
    p.tensors[0].data[0] += 1.0;
    EXPECT_THROW(backward(p, *r.cache, MapGrads::zeros(16, 16)), std::invalid_argument);
    EXPECT_THROW(backward(init_params(small_arch(), 5), *r.cache, MapGrads::zeros(8, 8)), std::invalid_argument);
}

TEST(Backward, MatchesCentralDifferencesOnEveryTensor) {
    // A slightly deeper config than the tiny one, so pooling, upsampling,
    // concatenation and the multi-level head all sit on the checked path.
    const ArchConfig a = small_arch();
    const auto p = init_params(a, 6);
    const Image img = random_image(16, 4);
    const MapGrads mg = random_map_grads(16, 5);
    const auto g = backward(p, *forward(p, img).cache, mg);
    std::mt19937_64 rng(7);
    const double h = 1e-4;
    for (std::size_t t = 0; t < p.tensors.size(); ++t) {
        double worst = 0.0;
        for (int k = 0; k < 6; ++k) {
            const std::size_t i = rng() % p.tensors[t].data.size();
            auto pp = p, pm = p;
            pp.tensors[t].data[i] += h;
            pm.tensors[t].data[i] -= h;
            const double fd = (objective(predict(pp, img), mg) - objective(predict(pm, img), mg)) / (2 * h);
            worst = std::max(worst, relative_error(g.tensors[t].data[i], fd));
        }
        EXPECT_LT(worst, 1e-3) << p.tensors[t].name;
    }
}

TEST(Backward, TinyConfigOracleUnderThreshold) {
    const GradCheckEntry e = check_backbone_grad(GradCheckOptions{});
    EXPECT_EQ(e.samples, 200);
    EXPECT_LT(e.max_rel_error, 1e-3);
    EXPECT_TRUE(e.passed);
}

TEST(Backward, InactiveFirstLayerHasZeroGradient) {
    // A black image makes every first-layer input column zero.
    const auto p = init_params(small_arch(), 8);
    Image black(16, 16);
    const auto g = backward(p, *forward(p, black).cache, random_map_grads(16, 9));
    for (double x : g["enc0.conv.w"].data) EXPECT_EQ(x, 0.0);
    double other = 0.0;
    for (double x : g["enc0.conv.b"].data) other += std::abs(x);
    EXPECT_GT(other, 0.0);
}

TEST(Backward, SparseMapGradientsMatchDense) {
    // The head visits only pixels with a non-zero map gradient; the result must
    // equal the dense computation with explicit zeros elsewhere.
    const auto p = init_params(small_arch(), 10);
    const Image img = random_image(16, 11);
    const auto r = forward(p, img);
    MapGrads sparse = MapGrads::zeros(16, 16);
    sparse.g_kappa(3, 4) = 1.5;
    sparse.g_alpha(10, 2) = -0.5;
    sparse.g_d(15, 15) = 2.0;
    const auto gs = backward(p, *r.cache, sparse);
    const double h = 1e-4;
    for (const char* name : {"head.w1", "dec0.conv.w", "enc1.res2.w"}) {
        const auto& t = p[name];
        for (std::size_t i = 0; i < t.data.size(); i += t.data.size() / 5 + 1) {
            auto pp = p, pm = p;
            pp[name].data[i] += h;
            pm[name].data[i] -= h;
            const double fd = (objective(predict(pp, img), sparse) - objective(predict(pm, img), sparse)) / (2 * h);
            EXPECT_LT(relative_error(gs[name].data[i], fd), 1e-3) << name << "[" << i << "]";
        }
    }
}

TEST(Residual, ZeroedBlockIsIdentity) {
    // With either residual kernel zeroed the block adds nothing, so both
    // variants produce the same maps.
    const auto p = init_params(small_arch(), 12);
    const Image img = random_image(16, 13);
    auto z1 = p, z2 = p;
    for (auto& x : z1["enc1.res1.w"].data) x = 0.0;
    for (auto& x : z2["enc1.res2.w"].data) x = 0.0;
    const auto m1 = predict(z1, img), m2 = predict(z2, img), m0 = predict(p, img);
    EXPECT_EQ(m1.d(), m2.d());
    EXPECT_EQ(m1.kappa(), m2.kappa());
    EXPECT_NE(m0.d(), m1.d());
}

TEST(InitParams, DeterministicAndFanInScaled) {
    const auto a = init_params(ArchConfig::desk(), 1);
    EXPECT_EQ(a, init_params(ArchConfig::desk(), 1));
    EXPECT_NE(a, init_params(ArchConfig::desk(), 2));
    for (const auto& t : a.tensors) {
        if (t.data.size() < 256) continue;
        double m = 0.0, s = 0.0;
        for (double x : t.data) m += x;
        m /= static_cast<double>(t.data.size());
        for (double x : t.data) s += (x - m) * (x - m);
        const double sd = std::sqrt(s / static_cast<double>(t.data.size()));
        const double target = 1.0 / std::sqrt(fan_in_of(t));
        EXPECT_NEAR(sd, target, 0.2 * target) << t.name;
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto path = temp_file("acmseg_ckpt_roundtrip.bin");
    const auto p = init_params(small_arch(), 14);
    write_checkpoint(path.string(), p, R"({"note": "x"})");
    const auto back = read_checkpoint(path.string());
    EXPECT_EQ(back.params, p);
    EXPECT_NE(back.meta_json.find("note"), std::string::npos);
    std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedAndMismatchedFilesAreRejected) {
    const auto path = temp_file("acmseg_ckpt_bad.bin");
    const auto p = init_params(small_arch(), 15);
    write_checkpoint(path.string(), p);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 9);
    EXPECT_THROW(read_checkpoint(path.string()), CheckpointError);

    write_checkpoint(path.string(), p);
    ArchConfig other = small_arch();
    other.head_hidden1 = 13;
    try {
        read_checkpoint(path.string(), other);
        FAIL() << "expected a mismatch error";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("head.w1"), std::string::npos) << e.what();
    }
    {
        std::ofstream os(path, std::ios::binary);
        os << "garbage";
    }
    EXPECT_THROW(read_checkpoint(path.string()), CheckpointError);
    EXPECT_THROW(read_checkpoint((path.string() + ".missing")), CheckpointError);
    std::filesystem::remove(path);
}

TEST(Params, ArithmeticHelpers) {
    auto a = init_params(small_arch(), 16);
    const double n2 = a.squared_norm();
    auto b = a;
    b.axpy(-1.0, a);
    EXPECT_DOUBLE_EQ(b.squared_norm(), 0.0);
    a.axpy(1.0, a);
    EXPECT_NEAR(a.squared_norm(), 4 * n2, 1e-9 * n2);
    EXPECT_TRUE(a.all_finite());
    a.tensors[2].data[0] = NAN;
    EXPECT_FALSE(a.all_finite());
    EXPECT_THROW(a["nope"], std::out_of_range);
}
