#pragma once

#include "mebnn/netspec.hpp"
#include "mebnn/tensor.hpp"
#include "mebnn/weights.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace mebnn {

// Execution counters filled in by forward(): every multiply-accumulate the
// kernels perform adds 2 to flops.
struct ExecStats {
    std::uint64_t flops = 0;
    std::uint64_t layers = 0;
};

// Standard single-layer semantics. dropout_point is the identity here; the
// inference engine resolves it to MCD or Masksembles.
Tensor forward(const LayerSpec& layer, const Tensor& input, const WeightStore& weights,
               const std::optional<QFormat>& qformat = std::nullopt, ExecStats* stats = nullptr);

// Runs `layers` in order (dropout points as identity).
Tensor forward_chain(std::span<const LayerSpec> layers, const Tensor& input, const WeightStore& weights,
                     const std::optional<QFormat>& qformat = std::nullopt, ExecStats* stats = nullptr);

// Max-subtracted exp-normalize in double precision.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const float> logits);

}  // namespace mebnn
