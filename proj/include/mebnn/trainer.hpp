#pragma once

#include "mebnn/dataset.hpp"
#include "mebnn/dropout.hpp"
#include "mebnn/netspec.hpp"
#include "mebnn/weights.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace mebnn {

struct TrainHyperParams {
    double lr = 0.05;
    int epochs = 100;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
};

// Double-precision trainer for the dense subset of the layer vocabulary
// (dense, relu, pools, flatten, dropout_point, terminal softmax). The loss is
// the sum over exits of the cross-entropy of each exit's softmax output.
class ToyTrainer {
public:
    ToyTrainer(const MultiExitSpec& me, const WeightStore& init);

    std::span<double> params() noexcept { return params_; }
    std::span<const double> params() const noexcept { return params_; }

    // Mean (over the batch) summed-exit cross-entropy. Sample i of the batch
    // draws its dropout realization from stream (dropout_seed, first_sample + i).
    double loss(std::span<const Tensor> inputs, std::span<const int> labels, std::uint64_t dropout_seed,
                std::uint64_t first_sample) const;
    // Same loss; writes d(loss)/d(params) into `grad` (resized to params().size()).
    double loss_and_gradient(std::span<const Tensor> inputs, std::span<const int> labels,
                             std::uint64_t dropout_seed, std::uint64_t first_sample, std::vector<double>& grad) const;

    void sgd_step(std::span<const double> grad, double lr);
    WeightStore export_weights() const;

private:
    struct ParamSlot {
        std::size_t weight_offset = 0;
        std::size_t bias_offset = 0;
    };

    double sample_pass(const Tensor& x, int label, std::uint64_t dropout_seed, std::uint64_t sample,
                       std::vector<double>* grad) const;

    MultiExitSpec me_;
    std::vector<double> params_;
    std::map<std::string, ParamSlot> slots_;
    std::map<std::string, MaskSet> masks_;
};

// Mini-batch gradient descent from seeded bounded-uniform init. Deterministic
// given hparams.seed.
WeightStore train_toy(const MultiExitSpec& me, const Dataset& data, const TrainHyperParams& hparams);

}  // namespace mebnn
