#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "acmseg/image.hpp"
#include "acmseg/priors.hpp"
#include "acmseg/ssvm.hpp"

namespace acmseg {

// Encoder-decoder layout. Encoder level k runs at input_size / 2^k with
// channels(k) feature maps; the decoder climbs back up from the bottleneck
// for decoder_levels steps, and every decoder output feeds the per-pixel head.
struct ArchConfig {
    int encoder_levels = 5;
    int decoder_levels = 4;
    int base_channels = 16;
    int max_channels = 128;
    int input_size = 128;
    int head_hidden1 = 256;
    int head_hidden2 = 64;

    void validate() const;
    int channels(int level) const;
    // Resolution level of the last (finest) decoder stage.
    int finest_level() const { return encoder_levels - 1 - decoder_levels; }
    int head_input_channels() const;

    static ArchConfig desk() { return {}; }
    static ArchConfig paper() { return {5, 4, 16, 128, 256, 256, 64}; }
    static ArchConfig tiny() { return {2, 1, 4, 128, 16, 256, 64}; }

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;

    std::size_t numel() const { return data.size(); }
    friend bool operator==(const Tensor&, const Tensor&) = default;
};

// All learnable weights, in a fixed order determined by the ArchConfig.
// The same type carries parameter gradients.
struct BackboneParams {
    ArchConfig arch;
    std::vector<Tensor> tensors;

    static BackboneParams zeros(const ArchConfig& arch);
    Tensor& operator[](const std::string& name);
    const Tensor& operator[](const std::string& name) const;
    std::size_t numel() const;
    double squared_norm() const;
    bool all_finite() const;
    std::uint64_t fingerprint() const;

    // this += s * o
    void axpy(double s, const BackboneParams& o);

    friend bool operator==(const BackboneParams&, const BackboneParams&) = default;
};

// Fan-in scaled uniform: every tensor (weights and biases) is drawn from
// U(-sqrt(3 / fan_in), sqrt(3 / fan_in)), i.e. std 1 / sqrt(fan_in).
BackboneParams init_params(const ArchConfig& arch, std::uint64_t seed);
double fan_in_of(const Tensor& t);

struct ForwardCache;  // opaque; holds the activations backward() needs

struct ForwardResult {
    PriorMaps maps;
    std::shared_ptr<const ForwardCache> cache;
};

// image must be input_size x input_size. alpha and beta go through softplus,
// D and kappa are linear outputs.
ForwardResult forward(const BackboneParams& params, const Image& image);
PriorMaps predict(const BackboneParams& params, const Image& image);

// Gradient of sum over maps <map_grads, maps> with respect to every tensor.
// Throws std::invalid_argument if the cache was produced by different params.
BackboneParams backward(const BackboneParams& params, const ForwardCache& cache, const MapGrads& map_grads);

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// "ACMSEGCK", u64 LE header length, JSON header {arch, tensors: [{name,
// shape, offset, count}], data_bytes, meta}, then little-endian f64 data.
void write_checkpoint(const std::string& path, const BackboneParams& params, const std::string& meta_json = "null");

struct LoadedCheckpoint {
    BackboneParams params;
    std::string meta_json;
};

// When expected is given, the stored architecture must match it; the error
// names the first tensor whose shape disagrees.
LoadedCheckpoint read_checkpoint(const std::string& path, const std::optional<ArchConfig>& expected = std::nullopt);

std::string arch_to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const std::string& text);

}  // namespace acmseg
