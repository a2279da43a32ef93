#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace acmseg {

struct GradCheckEntry {
    std::string name;  // "backbone", "acm_node_grad", "energy_map_grad"
    double max_rel_error = 0.0;
    double threshold = 0.0;
    int samples = 0;
    bool passed = false;
};

struct GradCheckOptions {
    std::uint64_t seed = 1;
    int backbone_samples = 200;
    double backbone_h = 1e-4;
    // Test hook: negate the analytic backbone gradient before comparing.
    bool inject_sign_flip = false;
};

struct GradCheckReport {
    std::uint64_t seed = 0;
    std::vector<GradCheckEntry> entries;

    bool passed() const;
    std::string first_failure() const;  // empty when everything passed
    std::string to_json() const;
};

// Relative error with a floor on the denominator: |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-6);

// Central differences on the tiny architecture, sampling weights uniformly
// over every tensor, against backward() for a random linear functional of
// the output maps.
GradCheckEntry check_backbone_grad(const GradCheckOptions& opts);

// node_grad on smooth synthetic maps against central differences of the
// smooth terms (h = 1e-3) plus a full re-rasterization difference of the
// balloon term at the configured offset.
GradCheckEntry check_acm_node_grad(std::uint64_t seed);

// energy_map_grads against one-cell perturbations of every map.
GradCheckEntry check_energy_map_grad(std::uint64_t seed);

GradCheckReport run_grad_checks(const GradCheckOptions& opts);

}  // namespace acmseg
