/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_FNV1A_HPP
#define CELLFUSE_FNV1A_HPP

#include <cstddef>
#include <cstdint>
#include <string>

namespace cellfuse {

/// Incremental FNV-1a 64-bit hash. Used as the integrity checksum in binary
/// artifacts and as the content digest for determinism checks.
class Fnv1a64 {
public:
    static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
    static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ = (state_ ^ p[i]) * kPrime;
        }
    }

    std::uint64_t digest() const { return state_; }

    std::string hex() const;

private:
    std::uint64_t state_ = kOffset;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
    Fnv1a64 h;
    h.update(data, n);
    return h.digest();
}

inline std::string Fnv1a64::hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t v = state_;
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace cellfuse

#endif
