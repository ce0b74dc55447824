#pragma once

#include <cstdint>

namespace latlab {

// Counter-based random stream. The state is a plain value (seed, stream_id,
// counter): replaying a stream from the same state yields the same numbers,
// and distinct stream_ids give statistically independent streams. Parallel
// code must split substreams instead of sharing one stream object.
struct RngStream {
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    std::uint64_t counter = 0;

    RngStream() = default;
    RngStream(std::uint64_t s, std::uint64_t id) : seed(s), stream_id(id) {}

    std::uint64_t next_u64();
    // Uniform in [0,1), 53-bit resolution.
    double uniform();
    // Uniform in (0,1]; safe as a log() argument.
    double uniform_pos();
    // Standard normal via Box-Muller; consumes exactly two uniforms.
    double normal();
    // Uniform integer in [0, n), n >= 1.
    std::uint64_t below(std::uint64_t n);

    // Derived independent stream; child counters start at zero.
    RngStream substream(std::uint64_t id) const;
};

} // namespace latlab
