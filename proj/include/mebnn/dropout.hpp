#pragma once

#include "mebnn/rng.hpp"
#include "mebnn/tensor.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mebnn {

enum class DropoutKind { mcd, masksembles };
enum class Granularity { element, channel };

std::string to_string(DropoutKind kind);
DropoutKind dropout_kind_from_string(const std::string& text);
std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& text);

// How every dropout_point in a network is realized at inference time.
// MCD uses keep_rate/granularity/inverted; Masksembles uses num_masks/scale.
struct DropoutConfig {
    DropoutKind kind = DropoutKind::mcd;
    double keep_rate = 0.75;
    Granularity granularity = Granularity::element;
    // Scale survivors by 1/keep_rate instead of keep_rate.
    bool inverted = false;
    int num_masks = 4;
    double scale = 1.0;
    std::uint64_t seed = 0;

    static DropoutConfig mcd(double keep_rate, Granularity g = Granularity::element, std::uint64_t seed = 0);
    static DropoutConfig masksembles(int num_masks, double scale);

    void validate() const;
    // Stable hex digest of the canonical serialization.
    std::string hash() const;

    friend bool operator==(const DropoutConfig&, const DropoutConfig&) = default;
};

void to_json(nlohmann::json& j, const DropoutConfig& cfg);
void from_json(const nlohmann::json& j, DropoutConfig& cfg);

// Pre-defined binary masks: masks[i][f] is 1 when feature f survives under
// mask i. All masks share the same popcount.
struct MaskSet {
    std::size_t feature_count = 0;
    double scale = 1.0;
    std::vector<std::vector<std::uint8_t>> masks;

    std::size_t num_masks() const noexcept { return masks.size(); }
    std::size_t ones_per_mask() const;

    friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

void to_json(nlohmann::json& j, const MaskSet& m);
void from_json(const nlohmann::json& j, MaskSet& m);

// Cyclic-window masks: k = min(F, round(scale * F / N)) ones per mask, mask i
// starts at offset round(i * F / N). Larger scale means more overlap.
MaskSet generate_masks(std::size_t feature_count, std::size_t num_masks, double scale);

// Number of independently masked units of a dropout input: channels for a
// (C, H, W) feature map, features for a flat vector.
std::size_t dropout_unit_count(const Shape& shape);

// Monte-Carlo dropout: a unit whose uniform draw exceeds keep_rate is zeroed,
// survivors are multiplied by keep_rate (or divided when inverted).
Tensor mcd_forward(const Tensor& input, double keep_rate, Granularity granularity, const RngStream& rng,
                   bool inverted = false);

// Masksembles: keep input where masks[mask_index] is 1, zero elsewhere. Masks
// apply per channel (broadcast over H x W) for rank-3 inputs.
Tensor masksembles_forward(const Tensor& input, std::size_t mask_index, const MaskSet& masks);

}  // namespace mebnn
