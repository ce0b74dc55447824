#include "latlab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace latlab {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// SplitMix64 finalizer; full avalanche on 64 bits.
inline std::uint64_t fmix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t id) {
    return fmix64(fmix64(seed + kGolden) ^ fmix64(id + 0x5851f42d4c957f2dULL));
}

} // namespace

std::uint64_t RngStream::next_u64() {

    const std::uint64_t k = stream_key(seed, stream_id);
    return fmix64(k + (counter++) * kGolden);
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_pos() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

double RngStream::normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::below: n must be >= 1");
    // Fixed-point multiply keeps the draw branch-free and replayable.
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
}

RngStream RngStream::substream(std::uint64_t id) const {
    RngStream s;
    s.seed = seed;
    s.stream_id = fmix64(stream_id * kGolden + fmix64(id + 1));
    s.counter = 0;
    return s;
}

} // namespace latlab
