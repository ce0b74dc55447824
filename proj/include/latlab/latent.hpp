#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latlab/mat.hpp"
#include "latlab/rng.hpp"

namespace latlab {

// n samples of L tokens with H channels each, plus optional class labels.
// The interchange object between the tokenizer and the analysis side.
struct LatentDataset {
    std::size_t n = 0;
    std::size_t tokens_per_sample = 0; // L
    std::size_t channels = 0;          // H
    std::vector<double> data;          // n * L * H, sample-major then token-major
    std::optional<std::vector<std::uint32_t>> labels;

    double& at(std::size_t i, std::size_t l, std::size_t h) {
        return data[(i * tokens_per_sample + l) * channels + h];
    }
    double at(std::size_t i, std::size_t l, std::size_t h) const {
        return data[(i * tokens_per_sample + l) * channels + h];
    }
};

// Binary latent file, little-endian:
//   magic "LATB1" (5 bytes), u8 flags (bit0 = labels present),
//   u32 n, u32 L, u32 H, n*L*H float64, then n u32 labels if flagged.
// Readers reject trailing bytes.
void write_latb1(const std::string& path, const LatentDataset& ds);
LatentDataset read_latb1(const std::string& path);

// Row i is sample i's tokens concatenated in token order.
Mat flatten(const LatentDataset& ds);
LatentDataset unflatten(const Mat& x, std::size_t tokens_per_sample, std::size_t channels);

struct PcaTransform {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<double> mean;
    Mat components; // output_dim x input_dim, orthonormal rows
    double explained_variance_ratio = 0.0;
};

// Components from the eigendecomposition of the sample covariance. output_dim
// is the smallest dimension whose cumulative explained variance reaches
// var_threshold; pass a positive forced_dim to override (comparison mode).
PcaTransform pca_fit(const Mat& x, double var_threshold, std::size_t forced_dim = 0);
Mat pca_apply(const PcaTransform& t, const Mat& x);

struct StandardizeStats {
    std::vector<double> mean;
    std::vector<double> std_dev; // floored at 1e-8
    std::vector<bool> floored;
};

// Per-column zero mean / unit variance, population conventions. Constant
// columns are floored and flagged rather than rejected.
std::pair<Mat, StandardizeStats> standardize_fit_apply(const Mat& x);

struct ProbeConfig {
    std::size_t epochs = 60;
    double lr = 0.1;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
    std::size_t batch = 64;
};

struct ProbeResult {
    double accuracy = 0.0; // top-1 on the held-out 10% split
    Mat weights;           // num_classes x (dim + 1), last column is the bias
};

// Multinomial logistic regression on frozen features; deterministic 90/10
// train/eval split by seeded shuffle.
ProbeResult linear_probe(const Mat& latents, const std::vector<std::uint32_t>& labels,
                         const ProbeConfig& cfg);

} // namespace latlab
