#include "acmseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

namespace acmseg {

namespace fs = std::filesystem;

Sample make_sample(std::string id, Image image, Polygon gt_polygon) {
    if (image.width != image.height) {
        throw DatasetError(id + ": image must be square, got " + std::to_string(image.width) + "x" +
                           std::to_string(image.height));
    }
    Mask m = rasterize(gt_polygon, image.width, image.height);
    if (m.count() == 0) throw DatasetError(id + ": ground-truth polygon encloses no pixels");
    return {std::move(id), std::move(image), std::move(gt_polygon), std::move(m)};
}

void SynthConfig::validate() const {
    if (n < 1) throw std::invalid_argument("synth: n must be >= 1");
    if (size < 32) throw std::invalid_argument("synth: size must be >= 32");
    if (!(offcenter_frac >= 0.0 && offcenter_frac <= 1.0)) throw std::invalid_argument("synth: offcenter_frac must be in [0, 1]");
    if (!(texture >= 0.0 && texture <= 1.0)) throw std::invalid_argument("synth: texture must be in [0, 1]");
    if (!(roughness >= 0.0 && roughness <= 0.5)) throw std::invalid_argument("synth: roughness must be in [0, 0.5]");
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Wave {
    double ku, kv, phase, amp;
};

// Sum of a few random plane waves: a cheap band-limited texture.
struct Texture {
    std::vector<Wave> waves;
    double eval(double u, double v) const {
        double s = 0.0;
        for (const auto& w : waves) s += w.amp * std::sin(w.ku * u + w.kv * v + w.phase);
        return s;
    }
};

Texture random_texture(std::mt19937_64& rng, int count, double fmin, double fmax, double amp) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Texture t;
    for (int i = 0; i < count; ++i) {
        const double f = fmin + (fmax - fmin) * unit(rng);
        const double th = kTwoPi * unit(rng);
        t.waves.push_back({f * std::cos(th), f * std::sin(th), kTwoPi * unit(rng), amp / std::sqrt(count)});
    }
    return t;
}

struct Blob {
    Point center;
    double r0;
    double amp[3];
    double phase[3];

    double radius(double th) const {
        double r = 1.0;
        for (int k = 0; k < 3; ++k) r += amp[k] * std::cos((k + 2) * th + phase[k]);
        return r0 * r;
    }
    bool contains(double u, double v) const {
        const double du = u - center.u, dv = v - center.v;
        return std::hypot(du, dv) < radius(std::atan2(dv, du));
    }
};

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

struct Generated {
    Sample sample;
    Mask object;
    Point center;
};

Generated generate_one(const SynthConfig& cfg, std::size_t index, bool offcenter) {
    std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(index), std::uint64_t{0x5eed}};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto uni = [&](double a, double b) { return a + (b - a) * unit(rng); };
    const double S = cfg.size;

    Blob blob{};
    for (int k = 0; k < 3; ++k) {
        blob.amp[k] = uni(0.0, 0.08);
        blob.phase[k] = uni(0.0, kTwoPi);
    }
    if (offcenter) {
        // Quadrant placement keeps the whole object in frame while its centre
        // sits at least 0.19 * sqrt(2) * size from the image centre.
        blob.r0 = uni(0.10, 0.14) * S;
        const double su = unit(rng) < 0.5 ? -1.0 : 1.0;
        const double sv = unit(rng) < 0.5 ? -1.0 : 1.0;
        blob.center = {S / 2 + su * uni(0.19, 0.28) * S, S / 2 + sv * uni(0.19, 0.28) * S};
    } else {
        blob.r0 = uni(0.16, 0.26) * S;
        blob.center = {S / 2 + uni(-0.08, 0.08) * S, S / 2 + uni(-0.08, 0.08) * S};
    }

    // Patches: Voronoi cells of 2-4 seeds inside the object.
    const int n_patch = 2 + static_cast<int>(unit(rng) * 3.0);
    std::vector<Point> seeds;
    std::vector<double> patch_rgb;
    std::vector<Texture> patch_tex;
    const double object_rgb[3] = {0.52, 0.30, 0.58};
    for (int p = 0; p < n_patch; ++p) {
        const double th = uni(0.0, kTwoPi), rr = uni(0.0, 0.7) * blob.r0;
        seeds.push_back({blob.center.u + rr * std::cos(th), blob.center.v + rr * std::sin(th)});
        for (int c = 0; c < 3; ++c) patch_rgb.push_back(object_rgb[c] + cfg.texture * uni(-0.18, 0.18));
        patch_tex.push_back(random_texture(rng, 3, 0.2, 0.9, 0.03 + 0.12 * cfg.texture));
    }
    const double bg_rgb[3] = {uni(0.82, 0.9), uni(0.66, 0.74), uni(0.76, 0.84)};
    const Texture bg_tex = random_texture(rng, 4, 0.05, 0.5, 0.04 + 0.06 * cfg.texture);
    const Texture tint = random_texture(rng, 2, 0.02, 0.08, 0.05);

    Image img(cfg.size, cfg.size);
    Mask object(cfg.size, cfg.size);
    std::normal_distribution<double> noise(0.0, 0.02);
    for (int v = 0; v < cfg.size; ++v) {
        for (int u = 0; u < cfg.size; ++u) {
            const bool in = blob.contains(u, v);
            object.set(u, v, in);
            double rgb[3];
            if (in) {
                int best = 0;
                double bd = 1e300;
                for (int p = 0; p < n_patch; ++p) {
                    const double d = squared_norm(Point{double(u), double(v)} - seeds[p]);
                    if (d < bd) { bd = d; best = p; }
                }
                const double t = patch_tex[best].eval(u, v);
                for (int c = 0; c < 3; ++c) rgb[c] = patch_rgb[3 * best + c] + t;
            } else {
                const double t = bg_tex.eval(u, v);
                for (int c = 0; c < 3; ++c) rgb[c] = bg_rgb[c] + t;
            }
            const double g = tint.eval(u, v);
            for (int c = 0; c < 3; ++c) {
                const double x = clamp01(rgb[c] + g + noise(rng));
                img.at(c, u, v) = std::round(x * 255.0) / 255.0;
            }
        }
    }

    // Rough annotation: a coarse polygon around the object, each vertex at
    // the object radius near its angle, pushed out halfway to the
    // circumscribed polygon, then jittered.
    const int K = 12 + static_cast<int>(unit(rng) * 9.0);
    const double phase0 = uni(0.0, kTwoPi / K);
    std::vector<Point> verts;
    for (int k = 0; k < K; ++k) {
        const double th = phase0 + kTwoPi * k / K;
        double rmax = 0.0;
        for (int j = -1; j <= 1; ++j) rmax = std::max(rmax, blob.radius(th + j * (kTwoPi / K) / 16.0));
        const double r = rmax * 0.5 * (1.0 + 1.0 / std::cos(std::numbers::pi / K)) + cfg.roughness * blob.r0 * uni(-1.0, 1.0);
        const double u = std::clamp(blob.center.u + r * std::cos(th), 0.5, S - 1.5);
        const double v = std::clamp(blob.center.v + r * std::sin(th), 0.5, S - 1.5);
        verts.push_back({u, v});
    }

    char id[32];
    std::snprintf(id, sizeof id, "s%05zu", index);
    return {make_sample(id, std::move(img), Polygon(std::move(verts))), std::move(object), blob.center};
}

}  // namespace

SynthOutput generate_with_truth(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t n = static_cast<std::size_t>(cfg.n);
    const auto n_off = static_cast<std::size_t>(std::lround(cfg.offcenter_frac * cfg.n));
    std::vector<bool> off(n, false);
    for (std::size_t i = 0; i < n_off; ++i) off[i] = true;
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::shuffle(off.begin(), off.end(), rng);

    SynthOutput out;
    for (std::size_t i = 0; i < n; ++i) {
        auto g = generate_one(cfg, i, off[i]);
        out.samples.push_back(std::move(g.sample));
        out.object_masks.push_back(std::move(g.object));
        out.object_centers.push_back(g.center);
    }
    return out;
}

std::vector<Sample> generate(const SynthConfig& cfg) { return generate_with_truth(cfg).samples; }

std::string synth_config_to_json(const SynthConfig& cfg) {
    return nlohmann::json{{"n", cfg.n},
                          {"size", cfg.size},
                          {"texture", cfg.texture},
                          {"offcenter_frac", cfg.offcenter_frac},
                          {"roughness", cfg.roughness},
                          {"seed", cfg.seed}}
        .dump();
}

void save_dir(const std::string& path, const std::vector<Sample>& samples, const std::string& config_json) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec || !fs::is_directory(path)) throw DatasetError("cannot create dataset directory " + path);
    nlohmann::json manifest;
    manifest["ids"] = nlohmann::json::array();
    for (const auto& s : samples) {
        write_image((fs::path(path) / (s.id + ".png")).string(), s.image);
        write_polygon((fs::path(path) / (s.id + ".json")).string(), s.gt_polygon);
        manifest["ids"].push_back(s.id);
    }
    manifest["synth_config"] = nlohmann::json::parse(config_json);
    std::ofstream os(fs::path(path) / "manifest.json");
    if (!os) throw DatasetError("cannot write manifest in " + path);
    os << manifest.dump(2) << '\n';
}

std::vector<Sample> load_dir(const std::string& path) {
    if (!fs::is_directory(path)) throw DatasetError("not a dataset directory: " + path);
    std::map<std::string, std::pair<bool, bool>> seen;  // id -> (png, json)
    for (const auto& e : fs::directory_iterator(path)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        const auto stem = e.path().stem().string();
        if (ext == ".png") seen[stem].first = true;
        if (ext == ".json" && e.path().filename() != "manifest.json") seen[stem].second = true;
    }
    std::vector<Sample> out;
    int dim = -1;
    for (const auto& [id, have] : seen) {
        const auto png = (fs::path(path) / (id + ".png")).string();
        const auto js = (fs::path(path) / (id + ".json")).string();
        if (!have.first) throw DatasetError("missing image for " + js);
        if (!have.second) throw DatasetError("missing polygon for " + png);
        Image img;
        Polygon poly({{0, 0}, {1, 0}, {0, 1}});
        try {
            img = read_image(png);
            poly = read_polygon(js);
        } catch (const std::exception& e) {
            throw DatasetError(e.what());
        }
        if (img.width != img.height) throw DatasetError(png + ": image is not square");
        if (dim < 0) dim = img.width;
        if (img.width != dim) throw DatasetError(png + ": size differs from other samples");
        for (const auto& p : poly.nodes()) {
            if (p.u < 0.0 || p.v < 0.0 || p.u > img.width - 1 || p.v > img.height - 1) {
                throw DatasetError(js + ": polygon lies outside the image bounds");
            }
        }
        try {
            out.push_back(make_sample(id, std::move(img), std::move(poly)));
        } catch (const DatasetError& e) {
            throw DatasetError(js + ": " + e.what());
        }
    }
    return out;
}

Box expanded_box(const Polygon& poly, double expand) {
    const Bounds b = bounds(poly);
    const double w = (b.max_u - b.min_u) * (1.0 + expand);
    const double h = (b.max_v - b.min_v) * (1.0 + expand);
    const double cu = 0.5 * (b.min_u + b.max_u), cv = 0.5 * (b.min_v + b.max_v);
    return {cu - w / 2, cv - h / 2, cu + w / 2, cv + h / 2};
}

Point map_to_crop(const Point& p, const Box& box, int out_w, int out_h) {
    return {(p.u - box.u0) * out_w / box.width() - 0.5, (p.v - box.v0) * out_h / box.height() - 0.5};
}

Image resize_bilinear(const Image& image, const Box& box, int out_w, int out_h) {
    Image out(out_w, out_h);
    const auto lerp_axis = [](double x, int n, int& i0, int& i1, double& t) {
        x = std::clamp(x, 0.0, static_cast<double>(n - 1));
        i0 = std::min(static_cast<int>(std::floor(x)), std::max(n - 2, 0));
        i1 = std::min(i0 + 1, n - 1);
        t = x - i0;
    };
    for (int j = 0; j < out_h; ++j) {
        const double y = box.v0 + (j + 0.5) * box.height() / out_h - 0.5;
        int y0, y1;
        double ty;
        lerp_axis(y, image.height, y0, y1, ty);
        for (int i = 0; i < out_w; ++i) {
            const double x = box.u0 + (i + 0.5) * box.width() / out_w - 0.5;
            int x0, x1;
            double tx;
            lerp_axis(x, image.width, x0, x1, tx);
            for (int c = 0; c < 3; ++c) {
                out.at(c, i, j) = (1 - tx) * (1 - ty) * image.at(c, x0, y0) + tx * (1 - ty) * image.at(c, x1, y0) +
                                  (1 - tx) * ty * image.at(c, x0, y1) + tx * ty * image.at(c, x1, y1);
            }
        }
    }
    return out;
}

Sample crop_and_resize(const Image& image, const Polygon& annotation, double expand, int out_size, std::string id) {
    if (!(expand >= 0.0)) throw std::invalid_argument("crop_and_resize: expand must be >= 0");
    if (out_size < 1) throw std::invalid_argument("crop_and_resize: out_size must be >= 1");
    Box box = expanded_box(annotation, expand);
    if (!(box.width() > 0.0) || !(box.height() > 0.0)) {
        throw std::invalid_argument("crop_and_resize: degenerate annotation bounding box");
    }
    box.u0 = std::max(box.u0, -0.5);
    box.v0 = std::max(box.v0, -0.5);
    box.u1 = std::min(box.u1, image.width - 0.5);
    box.v1 = std::min(box.v1, image.height - 0.5);
    if (!(box.width() > 0.0) || !(box.height() > 0.0)) {
        throw std::invalid_argument("crop_and_resize: annotation lies outside the image");
    }
    std::vector<Point> pts;
    for (const auto& p : annotation.nodes()) pts.push_back(map_to_crop(p, box, out_size, out_size));
    return make_sample(std::move(id), resize_bilinear(image, box, out_size, out_size), Polygon(std::move(pts)));
}

Split split_dataset(std::vector<Sample> samples, std::size_t n_test, std::uint64_t seed) {
    if (n_test >= samples.size()) throw std::invalid_argument("split_dataset: test split leaves no training samples");
    std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
    std::mt19937_64 rng(seed);
    std::shuffle(samples.begin(), samples.end(), rng);
    Split out;
    for (std::size_t i = 0; i < samples.size(); ++i) (i < n_test ? out.test : out.train).push_back(std::move(samples[i]));
    const auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
    std::sort(out.train.begin(), out.train.end(), by_id);
    std::sort(out.test.begin(), out.test.end(), by_id);
    return out;
}

Sample fit_to_size(const Sample& s, int target_size) {
    if (s.image.width == target_size) return s;
    if (target_size < 1 || s.image.width % target_size != 0) {
        throw DatasetError(s.id + ": image size " + std::to_string(s.image.width) +
                           " is not a multiple of the model input size " + std::to_string(target_size));
    }
    const int k = s.image.width / target_size;
    Image img(target_size, target_size);
    for (int c = 0; c < 3; ++c)
        for (int v = 0; v < target_size; ++v)
            for (int u = 0; u < target_size; ++u) {
                double acc = 0.0;
                for (int dv = 0; dv < k; ++dv)
                    for (int du = 0; du < k; ++du) acc += s.image.at(c, u * k + du, v * k + dv);
                img.at(c, u, v) = acc / (k * k);
            }
    std::vector<Point> pts;
    for (const auto& p : s.gt_polygon.nodes()) pts.push_back({(p.u + 0.5) / k - 0.5, (p.v + 0.5) / k - 0.5});
    return make_sample(s.id, std::move(img), Polygon(std::move(pts)));
}

}  // namespace acmseg
