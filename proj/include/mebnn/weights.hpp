#pragma once

#include "mebnn/netspec.hpp"
#include "mebnn/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace mebnn {

// layer id -> tensor name ("weight", "bias") -> tensor.
// Dense weights are (out, in); conv weights are (out, in, kh, kw).
class WeightStore {
public:
    using LayerTensors = std::map<std::string, Tensor>;

    void set(const std::string& layer_id, const std::string& name, Tensor t);
    const Tensor& get(const std::string& layer_id, const std::string& name) const;
    bool contains(const std::string& layer_id) const;
    const std::map<std::string, LayerTensors>& layers() const noexcept { return layers_; }

    friend bool operator==(const WeightStore&, const WeightStore&) = default;

private:
    std::map<std::string, LayerTensors> layers_;
};

// Expected (weight, bias) shapes of a learnable layer.
std::pair<Shape, Shape> parameter_shapes(const LayerSpec& layer);

// Bounded uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases.
WeightStore init_weights(const MultiExitSpec& me, std::uint64_t seed);

// Throws if a learnable layer is missing weights or has mismatched shapes.
void check_weights(const WeightStore& store, const MultiExitSpec& me);

WeightStore quantize_weights(const WeightStore& store, const QFormat& q);

// Leading-block slice of every learnable layer's tensors to the shapes `target`
// expects (channel-scaled variants of the network the store was trained for).
WeightStore slice_weights(const WeightStore& full, const MultiExitSpec& target);

// Manifest (structured text) + little-endian float32 blob. The blob path in
// the manifest is relative to the manifest's directory.
void save_weights(const WeightStore& store, const std::string& manifest_path, const std::string& blob_name = "");
WeightStore load_weights(const std::string& manifest_path);

}  // namespace mebnn
