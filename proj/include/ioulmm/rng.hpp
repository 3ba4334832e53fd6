#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace ioulmm {

/// Philox4x32-10 block function (Salmon et al., SC'11): a keyed bijection on
/// 128-bit counters. Same key and counter always give the same output.
[[nodiscard]] std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                                      std::array<std::uint32_t, 2> key);

/// Independent random stream addressed by (seed, purpose, a, b). Streams for
/// different addresses never overlap, so replications and subjects can be
/// generated in any order or in parallel with identical results.
class CounterRng {
public:
    using result_type = std::uint32_t;

    CounterRng(std::uint64_t seed, std::uint32_t purpose, std::uint32_t a, std::uint32_t b);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()();

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller; consumes uniforms in pairs.
    double normal();
    bool bernoulli(double p) { return uniform() < p; }
    /// Uniform integer in [0, n) by rejection, no modulo bias.
    std::uint32_t below(std::uint32_t n);

private:
    void refill();

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> counter_;
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Purpose tags that separate the stream families used by the simulator.
enum class StreamPurpose : std::uint32_t { Design = 1, Noise = 2, Directions = 3, Diagnostics = 4 };

} // namespace ioulmm
