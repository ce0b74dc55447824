#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latlab/mat.hpp"
#include "latlab/rng.hpp"

namespace latlab {

// Procedural image set: {circle, square, triangle, cross, ring} x {2 colors}
// = 10 classes, random position/scale over a noisy background. Pixels in
// [0,1], layout (y*size+x)*3+c. Class labels are balanced within +-1.
struct ToyImageSet {
    std::size_t n = 0;
    std::size_t size = 0;
    Mat pixels; // n x (size*size*3)
    std::vector<std::uint32_t> labels;
    std::size_t num_classes = 10;
};

struct ToyDataConfig {
    std::size_t image_size = 32;
    double background_noise = 0.04;
    // Random linear background ramp per image (class-irrelevant low-frequency
    // variation); amplitude of the end-to-end shift per channel.
    double gradient_amplitude = 0.25;
    // Shape radius range as a fraction of the image side.
    double radius_lo = 0.20;
    double radius_hi = 0.36;
    std::uint64_t seed = 0;
};

ToyImageSet gen_toy_dataset(std::size_t n, const ToyDataConfig& cfg);

// Binary image file "IMGB1" (little-endian): magic (5 bytes), u8 flags
// (bit0 = labels), u32 n, u32 size, u32 channels=3, pixels float64,
// then n u32 labels.
void write_imgb1(const std::string& path, const ToyImageSet& set);
ToyImageSet read_imgb1(const std::string& path);

} // namespace latlab
