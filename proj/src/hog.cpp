#include "latlab/hog.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace latlab {

Mat hog_features(std::span<const double> image, std::size_t size, const HogConfig& cfg) {
    if (image.size() != size * size * 3) throw std::invalid_argument("hog_features: bad image size");
    if (size % cfg.cell != 0)
        throw std::invalid_argument("hog_features: image size not divisible by cell");
    const std::size_t cells = size / cfg.cell;

    std::vector<double> gray(size * size);
    for (std::size_t i = 0; i < size * size; ++i)
        gray[i] = (image[3 * i] + image[3 * i + 1] + image[3 * i + 2]) / 3.0;

    Mat feat(cells * cells, cfg.bins);
    const double bin_width = std::numbers::pi / static_cast<double>(cfg.bins);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            // Centered differences, one-sided at the borders.
            const std::size_t xl = x > 0 ? x - 1 : x, xr = x + 1 < size ? x + 1 : x;
            const std::size_t yl = y > 0 ? y - 1 : y, yr = y + 1 < size ? y + 1 : y;
            const double gx = (gray[y * size + xr] - gray[y * size + xl]) /
                              static_cast<double>(xr - xl == 0 ? 1 : xr - xl);
            const double gy = (gray[yr * size + x] - gray[yl * size + x]) /
                              static_cast<double>(yr - yl == 0 ? 1 : yr - yl);
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag <= 0.0) continue;
            double angle = std::atan2(gy, gx); // fold to [0, pi)
            if (angle < 0.0) angle += std::numbers::pi;
            if (angle >= std::numbers::pi) angle -= std::numbers::pi;
            std::size_t bin = static_cast<std::size_t>(angle / bin_width);
            if (bin >= cfg.bins) bin = cfg.bins - 1;
            const std::size_t cell_idx = (y / cfg.cell) * cells + (x / cfg.cell);
            feat.at(cell_idx, bin) += mag;
        }
    }

    // Per-cell L2 normalization; all-zero cells stay zero.
    for (std::size_t c = 0; c < feat.rows; ++c) {
        double s = 0.0;
        for (std::size_t b = 0; b < cfg.bins; ++b) s += feat.at(c, b) * feat.at(c, b);
        const double inv = 1.0 / std::sqrt(s + 1e-6 * 1e-6);
        if (s > 0.0)
            for (std::size_t b = 0; b < cfg.bins; ++b) feat.at(c, b) *= inv;
    }
    return feat;
}

} // namespace latlab
