#include "mebnn/rng.hpp"

#include <cmath>
#include <numbers>

namespace mebnn {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept
{
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) noexcept
{
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, ctr[0], hi0, lo0);
        mulhilo(kMul1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

std::uint32_t fnv1a32(std::string_view text) noexcept
{
    std::uint32_t h = 2166136261u;
    for (unsigned char c : text) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text) noexcept
{
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t sample_index, std::string_view layer_id) noexcept
    : seed_(seed)
    , sample_(sample_index)
    , layer_hash_(fnv1a32(layer_id))
{
}

std::uint64_t RngStream::bits_at(std::uint64_t counter) const noexcept
{
    const auto out = philox4x32(
        {static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
         static_cast<std::uint32_t>(sample_ ^ (sample_ >> 32)), layer_hash_},
        {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

double RngStream::uniform_at(std::uint64_t counter) const noexcept
{
    return static_cast<double>(bits_at(counter) >> 11) * 0x1.0p-53;
}

double RngStream::next_normal() noexcept
{
    const double u1 = 1.0 - next_uniform();  // (0, 1]
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::next_below(std::uint64_t bound) noexcept
{
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = bound == 0 ? 0 : (~std::uint64_t{0} / bound) * bound;
    for (;;) {
        const std::uint64_t v = next_bits();
        if (v < limit)
            return v % bound;
    }
}

}  // namespace mebnn
