#pragma once

#include <cstdint>
#include <string_view>

namespace mvpost::num {

/// Counter-based pseudo-random stream. A (seed, stream) pair identifies the
/// full sequence, and every draw is addressable by counter, so parallel
/// consumers can pull from disjoint counter ranges without sharing state.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    std::uint64_t bits_at(std::uint64_t counter) const;
    double uniform_at(std::uint64_t counter) const;  // strictly inside (0,1)
    double normal_at(std::uint64_t counter) const;

    // Stateful convenience wrappers over an internal counter.
    std::uint64_t next_bits() { return bits_at(counter_++); }
    double uniform() { return uniform_at(counter_++); }
    double normal() { return normal_at(counter_++); }

    /// Uniform integer in [0, bound); bound must be positive.
    std::uint64_t uniform_int(std::uint64_t bound);

    RngStream substream(std::uint64_t id) const;

    /// Deterministic stream id from a textual tag plus two integers
    /// (typically station id, date, and a purpose code).
    static std::uint64_t derive_stream(std::string_view tag, std::uint64_t a, std::uint64_t b);

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t base_;
    std::uint64_t counter_ = 0;
};

}  // namespace mvpost::num
