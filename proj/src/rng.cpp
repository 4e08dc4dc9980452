#include "mvpost/rng.hpp"

#include <stdexcept>

#include "mvpost/special.hpp"

namespace mvpost::num {

namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), base_(mix64(mix64(seed) ^ mix64(stream * kGamma + 1))) {}

std::uint64_t RngStream::bits_at(std::uint64_t counter) const {
    return mix64(base_ + kGamma * counter);
}

double RngStream::uniform_at(std::uint64_t counter) const {
    // 52 bits plus a half-ulp offset: both endpoints stay unreachable even
    // after rounding, so the value is strictly inside (0,1).
    return (double(bits_at(counter) >> 12) + 0.5) * (1.0 / 4503599627370496.0);
}

double RngStream::normal_at(std::uint64_t counter) const {
    return std_normal_quantile(uniform_at(counter));
}

std::uint64_t RngStream::uniform_int(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("RngStream::uniform_int: bound must be positive");
    return std::uint64_t((static_cast<__uint128_t>(next_bits()) * bound) >> 64);
}

RngStream RngStream::substream(std::uint64_t id) const {
    return RngStream(seed_, mix64(stream_ * kGamma + 0x632BE59BD9B4E019ULL) ^ id);
}

std::uint64_t RngStream::derive_stream(std::string_view tag, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    h = mix64(h ^ mix64(a * kGamma + 1));
    h = mix64(h ^ mix64(b * kGamma + 2));
    return h;
}

}  // namespace mvpost::num
