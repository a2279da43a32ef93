#pragma once

#include <string>

#include "acmseg/geometry.hpp"
#include "acmseg/grid.hpp"

namespace acmseg {

// The four per-pixel maps weighting the snake energy: data term D,
// membrane weight alpha, thin-plate weight beta and balloon kappa.
class PriorMaps {
public:
    // Throws std::invalid_argument on shape mismatch, non-finite values, or
    // negative alpha/beta.
    PriorMaps(Grid d, Grid alpha, Grid beta, Grid kappa);

    static PriorMaps zeros(int width, int height);

    int width() const { return d_.width; }
    int height() const { return d_.height; }
    const Grid& d() const { return d_; }
    const Grid& alpha() const { return alpha_; }
    const Grid& beta() const { return beta_; }
    const Grid& kappa() const { return kappa_; }

    PriorMaps with_kappa(Grid kappa) const;

private:
    Grid d_, alpha_, beta_, kappa_;
};

struct Sampled {
    double value;
    Point grad;
};

// Bilinear interpolation at a sub-pixel point, with the exact derivative of
// the bilinear patch. Points outside [0, W-1] x [0, H-1] are clamped; the
// clamped gradient component is zero.
Sampled sample(const Grid& map, Point p);

// Bilinear weights used by sample(): four (index, weight) pairs summing to 1.
struct BilinearStencil {
    std::size_t index[4];
    double weight[4];
};
BilinearStencil bilinear_stencil(const Grid& map, Point p);

// Sum of kappa over the rasterized interior of poly.
double region_sum(const Grid& kappa, const Polygon& poly);

// Writes d.png, alpha.png, beta.png, kappa.png (each min-max normalized to
// 8-bit gray) and ranges.json with the {min, max} used per map.
void dump_maps(const PriorMaps& maps, const std::string& dir);

}  // namespace acmseg
