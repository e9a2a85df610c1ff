#pragma once

// Counter-based random numbers (Philox-4x32-10). Every draw is a pure function
// of (seed, stream, sample, step, index), so sample paths do not depend on the
// order in which worker threads execute them.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace nibb {

using Philox4x32 = std::array<std::uint32_t, 4>;

inline Philox4x32 philox4x32_10(Philox4x32 ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += W0;
        key[1] += W1;
    }
    return ctr;
}

enum class Stream : std::uint32_t { brownian = 0, initial = 1, reference = 2 };

/// Standard normal draw keyed by (seed, stream, sample, step, index).
inline double counter_normal(std::uint64_t seed, Stream stream, std::uint64_t sample, std::uint64_t step,
                             std::uint32_t index) {
    // The step counter is folded into the key's high bits and the counter words
    // so that 2^32 steps per sample stay distinct.
    const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed),
                                           static_cast<std::uint32_t>(seed >> 32)};
    const Philox4x32 ctr{static_cast<std::uint32_t>(sample), static_cast<std::uint32_t>(step), index,
                         static_cast<std::uint32_t>(stream) ^ (static_cast<std::uint32_t>(step >> 32) << 2) ^
                             (static_cast<std::uint32_t>(sample >> 32) << 17)};
    const Philox4x32 r = philox4x32_10(ctr, key);
    const std::uint64_t a = (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
    const std::uint64_t b = (static_cast<std::uint64_t>(r[2]) << 32) | r[3];
    const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;          // [0, 1)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace nibb
