#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "acmseg/geometry.hpp"
#include "acmseg/image.hpp"

namespace acmseg {

struct Sample {
    std::string id;
    Image image;
    Polygon gt_polygon;
    Mask gt_mask;  // rasterize(gt_polygon) at image size
};

// Builds a sample, rasterizing the mask. Throws DatasetError if the image is
// not square or the mask comes out empty.
Sample make_sample(std::string id, Image image, Polygon gt_polygon);

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SynthConfig {
    int n = 200;
    int size = 128;
    double texture = 0.5;         // 0: homogeneous object; 1: strongly heterogeneous patches
    double offcenter_frac = 0.2;  // share of objects centred > 0.25 * size from the image centre
    double roughness = 0.1;       // annotation vertex jitter, fraction of object radius
    std::uint64_t seed = 1;

    void validate() const;
};

// One blob per image: a Fourier-perturbed circle split into 2-4 texture
// patches over a textured background, annotated by a coarse 12-20 vertex
// polygon. Images are quantized to 8-bit levels so they survive a PNG round
// trip unchanged.
std::vector<Sample> generate(const SynthConfig& cfg);

// Same as generate(), also returning the exact object masks.
struct SynthOutput {
    std::vector<Sample> samples;
    std::vector<Mask> object_masks;
    std::vector<Point> object_centers;
};
SynthOutput generate_with_truth(const SynthConfig& cfg);

std::string synth_config_to_json(const SynthConfig& cfg);

// <id>.png + <id>.json per sample, manifest.json listing the ids.
void save_dir(const std::string& path, const std::vector<Sample>& samples, const std::string& config_json = "null");

// Loads every <id>.png / <id>.json pair, sorted by id.
std::vector<Sample> load_dir(const std::string& path);

struct Box {
    double u0, v0, u1, v1;  // pixel-edge coordinates; pixel u spans [u - 0.5, u + 0.5]
    double width() const { return u1 - u0; }
    double height() const { return v1 - v0; }
};

// Polygon bounding box grown by `expand` in width and height about its centre,
// before clamping.
Box expanded_box(const Polygon& poly, double expand);

// Crops the expanded, image-clamped box and resizes it to out_size x out_size
// (bilinear for pixels, affine map for the polygon).
Sample crop_and_resize(const Image& image, const Polygon& annotation, double expand, int out_size,
                       std::string id = "crop");

// Maps a pixel-edge box onto an out_w x out_h grid: x' = (x - u0) * out / w - 0.5.
Point map_to_crop(const Point& p, const Box& box, int out_w, int out_h);

Image resize_bilinear(const Image& image, const Box& box, int out_w, int out_h);

struct Split {
    std::vector<Sample> train;
    std::vector<Sample> test;
};

// Seeded shuffle, then the first n_test samples form the test set. Both halves
// come back sorted by id.
Split split_dataset(std::vector<Sample> samples, std::size_t n_test, std::uint64_t seed);

// Downsamples a sample whose size is an integer multiple of target_size
// (box filter for pixels, coordinate scaling for the polygon).
Sample fit_to_size(const Sample& s, int target_size);

}  // namespace acmseg
