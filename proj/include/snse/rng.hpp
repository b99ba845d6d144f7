/// @file rng.hpp
/// Counter-based Gaussian sampling: Philox4x32-10 plus Box-Muller.
///
/// Every draw is addressed by (seed, stream, index), so any path in any
/// ensemble can be regenerated in isolation and in any order.  This is what
/// makes the replay contract byte-exact even under a worker pool.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace snse {

/// One Philox4x32-10 block: 4 x 32-bit counter, 2 x 32-bit key -> 4 x 32 bits.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
    constexpr std::uint32_t b0 = 0x9E3779B9u, b1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t(m0) * ctr[0];
        const std::uint64_t p1 = std::uint64_t(m1) * ctr[2];
        ctr = {std::uint32_t(p1 >> 32) ^ ctr[1] ^ key[0],
               std::uint32_t(p1),
               std::uint32_t(p0 >> 32) ^ ctr[3] ^ key[1],
               std::uint32_t(p0)};
        key[0] += b0;
        key[1] += b1;
    }
    return ctr;
}

/// Stateless Gaussian source.  Draw i of stream s under seed k is a pure
/// function of (k, s, i); consecutive indices share no state.
class GaussianStream {
  public:
    GaussianStream(std::uint64_t seed, std::uint64_t stream)
        : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)},
          hi_{std::uint32_t(stream), std::uint32_t(stream >> 32)} {}

    /// Standard normal draw at absolute index i.
    double normal(std::uint64_t i) const {
        // One block yields two independent normals; index selects the half.
        const auto r = philox4x32({std::uint32_t(i >> 1), std::uint32_t(i >> 33), hi_[0], hi_[1]}, key_);
        const double u1 = to_unit(r[0], r[1]); // in (0,1), bounded away from 0
        const double u2 = to_unit(r[2], r[3]);
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 2.0 * pi_ * u2;
        return (i & 1u) ? rad * std::sin(ang) : rad * std::cos(ang);
    }

  private:
    static double to_unit(std::uint32_t a, std::uint32_t b) {
        // 53 significant bits, offset by half an ulp so 0 is never produced.
        const std::uint64_t x = (std::uint64_t(a) << 21) | (b >> 11);
        return (double(x) + 0.5) * (1.0 / 9007199254740992.0);
    }

    static constexpr double pi_ = 3.14159265358979323846;
    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 2> hi_;
};

} // namespace snse
