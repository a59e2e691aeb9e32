#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace mebnn {

// Philox4x32-10 block: maps (counter, key) to four pseudo-random words.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

std::uint32_t fnv1a32(std::string_view text) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;

// Counter-based random stream. Draw i depends only on (seed, sample index,
// layer id, i), so samples can be generated in any order or concurrently and
// still produce the same values.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t sample_index, std::string_view layer_id) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t sample_index() const noexcept { return sample_; }
    std::uint32_t layer_hash() const noexcept { return layer_hash_; }
    std::uint64_t counter() const noexcept { return counter_; }

    // Random 64-bit word for an explicit counter value; does not advance.
    std::uint64_t bits_at(std::uint64_t counter) const noexcept;
    // Uniform in [0, 1) from the 53 high bits of bits_at(counter).
    double uniform_at(std::uint64_t counter) const noexcept;

    std::uint64_t next_bits() noexcept { return bits_at(counter_++); }
    double next_uniform() noexcept { return uniform_at(counter_++); }
    // Standard normal via Box-Muller; consumes two counters.
    double next_normal() noexcept;
    // Uniform integer in [0, bound).
    std::uint64_t next_below(std::uint64_t bound) noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t sample_;
    std::uint32_t layer_hash_;
    std::uint64_t counter_ = 0;
};

}  // namespace mebnn
