#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "latlab/mat.hpp"

namespace latlab {

struct HogConfig {
    std::size_t cell = 4; // matches the patch size
    std::size_t bins = 8; // unsigned orientations over 180 degrees
};

// Per-cell histogram of oriented gradients of one image:
// grayscale -> centered differences -> magnitude-weighted unsigned
// orientation votes -> per-cell L2 normalization (eps 1e-6).
// image is (size*size*3) in [0,1], pixel layout (y*size+x)*3+c.
// Returns (cells_per_side^2) x bins, cells in row-major order.
Mat hog_features(std::span<const double> image, std::size_t size, const HogConfig& cfg = {});

} // namespace latlab
