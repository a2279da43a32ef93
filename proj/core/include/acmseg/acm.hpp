#pragma once

#include <span>
#include <string>
#include <vector>

#include "acmseg/geometry.hpp"
#include "acmseg/priors.hpp"

namespace acmseg {

struct AcmOptions {
    int max_iters = 200;
    double step_size = 0.5;     // pixels per unit gradient
    bool backtracking = true;   // halve the step up to 8 times until energy does not increase
    double converge_tol = 1e-3; // stop when the largest node displacement falls below this
    int L = 60;                 // node count of initial contours
    int resample_every = 0;     // re-space nodes every k iterations; 0 disables
    double balloon_h = 0.5;     // finite-difference offset for the region term gradient

    void validate() const;
};

struct EnergyTerms {
    double data = 0.0;
    double membrane = 0.0;
    double thin_plate = 0.0;
    double balloon = 0.0;

    double total() const { return data + membrane + thin_plate + balloon; }
};

// Snake energy with unit node spacing:
//   sum_s D(y_s) + alpha(y_s) |dy_s|^2 + beta(y_s) |d2y_s|^2  +  sum_{pixels inside} kappa
EnergyTerms energy_terms(const Polygon& poly, const PriorMaps& maps);
double energy(const Polygon& poly, const PriorMaps& maps);

// dE/dy_s per node. The smooth terms are differentiated analytically; the
// balloon term uses central differences of the rasterized kappa sum with
// offset balloon_h, evaluated locally from the two edges touching each node.
std::vector<Point> node_grad(const Polygon& poly, const PriorMaps& maps, double balloon_h = 0.5);

// Balloon-only part of node_grad.
std::vector<Point> balloon_grad(const Polygon& poly, const Grid& kappa, double balloon_h = 0.5);

struct EvolveResult {
    Polygon final;
    std::vector<double> trace;  // energy before the first step, then after each accepted step
    int iterations = 0;
    bool converged = false;     // displacement fell below converge_tol, or no descent step exists
};

EvolveResult evolve(const Polygon& init, const PriorMaps& maps, const AcmOptions& opts);

// Five circles of radius radius_frac * min(width, height) centred at the four
// quarter points and the image centre, in that order.
std::vector<Polygon> init_polygons(int width, int height, double radius_frac, int L);
inline constexpr std::size_t kCenterInit = 4;
inline constexpr double kDefaultRadiusFrac = 0.2;

struct Candidate {
    Polygon poly;
    double energy;
    int iterations;
};

std::vector<Candidate> infer_multi(const PriorMaps& maps, const AcmOptions& opts,
                                   double radius_frac = kDefaultRadiusFrac);

struct Selection {
    std::size_t index;
    double iou;
};

// Highest IoU against gt; ties go to the lowest index.
Selection select_best(std::span<const Polygon> results, const Mask& gt);
Selection select_best(std::span<const Candidate> results, const Mask& gt);

// Lowest final energy; ties go to the lowest index.
std::size_t select_best_unsupervised(std::span<const Candidate> results);

// iter,energy
void write_trace_csv(const std::string& path, std::span<const double> trace);

}  // namespace acmseg
