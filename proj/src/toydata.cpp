#include "latlab/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace latlab {

namespace {

double sd_circle(double dx, double dy, double r) { return std::sqrt(dx * dx + dy * dy) - r; }

double sd_ring(double dx, double dy, double r) {
    return std::abs(std::sqrt(dx * dx + dy * dy) - r * 0.78) - 0.26 * r;
}

double sd_square(double dx, double dy, double r) {
    return std::max(std::abs(dx), std::abs(dy)) - 0.8 * r;
}

double sd_cross(double dx, double dy, double r) {
    const double w = 0.32 * r;
    const double horiz = std::max(std::abs(dx) - r, std::abs(dy) - w);
    const double vert = std::max(std::abs(dx) - w, std::abs(dy) - r);
    return std::min(horiz, vert);
}

double sd_triangle(double dx, double dy, double r) {
    // Intersection of three half-planes; vertices at 90/210/330 degrees.
    double d = -1e30;
    for (int e = 0; e < 3; ++e) {
        const double a0 = (90.0 + 120.0 * e) * std::numbers::pi / 180.0;
        const double a1 = (90.0 + 120.0 * (e + 1)) * std::numbers::pi / 180.0;
        const double vx = r * std::cos(a0), vy = r * std::sin(a0);
        const double ux = r * std::cos(a1) - vx, uy = r * std::sin(a1) - vy;
        // Outward normal of the edge.
        double nx = uy, ny = -ux;
        const double nn = std::sqrt(nx * nx + ny * ny);
        nx /= nn;
        ny /= nn;
        d = std::max(d, nx * (dx - vx) + ny * (dy - vy));
    }
    return d;
}

} // namespace

ToyImageSet gen_toy_dataset(std::size_t n, const ToyDataConfig& cfg) {
    if (n < 1) throw std::invalid_argument("gen_toy_dataset: n must be >= 1");
    const std::size_t s = cfg.image_size;
    ToyImageSet set;
    set.n = n;
    set.size = s;
    set.pixels = Mat(n, s * s * 3);
    set.labels.resize(n);

    const double colors[2][3] = {{0.85, 0.25, 0.20}, {0.20, 0.35, 0.90}};
    RngStream base(cfg.seed, 0x746f7969ULL);

    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t label = static_cast<std::uint32_t>(i % 10);
        const std::size_t shape = label / 2;
        const std::size_t color = label % 2;
        set.labels[i] = label;
        RngStream rng = base.substream(i);

        const double cx = (0.32 + 0.36 * rng.uniform()) * static_cast<double>(s);
        const double cy = (0.32 + 0.36 * rng.uniform()) * static_cast<double>(s);
        const double radius =
            (cfg.radius_lo + (cfg.radius_hi - cfg.radius_lo) * rng.uniform()) *
            static_cast<double>(s);
        const double bg = 0.18 + 0.12 * rng.uniform();
        // Per-channel linear ramps across the frame.
        double ramp_x[3], ramp_y[3];
        for (int c = 0; c < 3; ++c) {
            ramp_x[c] = cfg.gradient_amplitude * (rng.uniform() - 0.5) * 2.0;
            ramp_y[c] = cfg.gradient_amplitude * (rng.uniform() - 0.5) * 2.0;
        }
        double col[3];
        for (int c = 0; c < 3; ++c)
            col[c] = std::clamp(colors[color][c] + 0.06 * (rng.uniform() - 0.5), 0.0, 1.0);

        auto px = set.pixels.row(i);
        const double inv_s = 1.0 / static_cast<double>(s);
        for (std::size_t y = 0; y < s; ++y) {
            for (std::size_t x = 0; x < s; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - cx;
                const double dy = static_cast<double>(y) + 0.5 - cy;
                double d;
                switch (shape) {
                    case 0: d = sd_circle(dx, dy, radius); break;
                    case 1: d = sd_square(dx, dy, radius); break;
                    case 2: d = sd_triangle(dx, dy, radius); break;
                    case 3: d = sd_cross(dx, dy, radius); break;
                    default: d = sd_ring(dx, dy, radius); break;
                }
                const double cover = std::clamp(0.5 - d, 0.0, 1.0); // ~1px soft edge
                const double u = static_cast<double>(x) * inv_s - 0.5;
                const double v = static_cast<double>(y) * inv_s - 0.5;
                for (int c = 0; c < 3; ++c) {
                    const double noise = cfg.background_noise * (rng.uniform() - 0.5) * 2.0;
                    const double base = bg + ramp_x[c] * u + ramp_y[c] * v;
                    const double val = base + cover * (col[c] - base) + noise;
                    px[(y * s + x) * 3 + static_cast<std::size_t>(c)] = std::clamp(val, 0.0, 1.0);
                }
            }
        }
    }
    return set;
}

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

void write_imgb1(const std::string& path, const ToyImageSet& set) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_imgb1: cannot open " + path);
    f.write("IMGB1", 5);
    const unsigned char flags = 1;
    f.write(reinterpret_cast<const char*>(&flags), 1);
    put_u32(f, static_cast<std::uint32_t>(set.n));
    put_u32(f, static_cast<std::uint32_t>(set.size));
    put_u32(f, 3);
    f.write(reinterpret_cast<const char*>(set.pixels.data.data()),
            static_cast<std::streamsize>(set.pixels.data.size() * sizeof(double)));
    for (std::uint32_t v : set.labels) put_u32(f, v);
    if (!f) throw std::runtime_error("write_imgb1: write failed for " + path);
}

ToyImageSet read_imgb1(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_imgb1: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    auto fail = [&](const std::string& msg, std::size_t offset) {
        throw std::runtime_error("read_imgb1: " + msg + " at byte offset " +
                                 std::to_string(offset) + " in " + path);
    };
    if (bytes.size() < 18) fail("truncated header", bytes.size());
    if (std::memcmp(bytes.data(), "IMGB1", 5) != 0) fail("bad magic", 0);
    const unsigned char flags = bytes[5];
    ToyImageSet set;
    set.n = get_u32(bytes.data() + 6);
    set.size = get_u32(bytes.data() + 10);
    const std::uint32_t channels = get_u32(bytes.data() + 14);
    if (channels != 3) fail("unsupported channel count", 14);
    const std::size_t values = set.n * set.size * set.size * 3;
    std::size_t expect = 18 + values * sizeof(double);
    if (flags & 1) expect += set.n * 4;
    if (bytes.size() != expect) fail("size mismatch", std::min(bytes.size(), expect));
    set.pixels = Mat(set.n, set.size * set.size * 3);
    std::memcpy(set.pixels.data.data(), bytes.data() + 18, values * sizeof(double));
    if (flags & 1) {
        set.labels.resize(set.n);
        const unsigned char* p = bytes.data() + 18 + values * sizeof(double);
        for (std::size_t i = 0; i < set.n; ++i) set.labels[i] = get_u32(p + 4 * i);
    }
    return set;
}

} // namespace latlab
