#pragma once

#include "mebnn/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mebnn {

// Labeled samples sharing one feature shape.
struct Dataset {
    Shape feature_shape;
    std::size_t class_count = 0;
    std::vector<Tensor> inputs;
    std::vector<int> labels;

    std::size_t size() const noexcept { return inputs.size(); }
    void add(Tensor x, int label);
    void validate() const;
};

// Isotropic 2-D Gaussian blobs, centers evenly spaced on a circle of `radius`.
Dataset make_blobs(std::size_t per_class, std::size_t classes, double radius, double spread, std::uint64_t seed);

// Deterministic shuffled split; the first part holds round(fraction * n) samples.
std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double train_fraction, std::uint64_t seed);

// CSV with header f0,...,f{n-1},label. Feature shape is flat.
void save_csv(const Dataset& data, const std::string& path);
Dataset load_csv(const std::string& path);

struct NoiseSpec {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::size_t count = 100;
    std::uint64_t seed = 0;
};

// Per-feature mean and (population) standard deviation.
NoiseSpec noise_like(const Dataset& data, std::size_t count, std::uint64_t seed);

// `count` i.i.d. Gaussian inputs with the given per-feature mean/std.
std::vector<Tensor> gaussian_noise(const Shape& feature_shape, const NoiseSpec& spec);

}  // namespace mebnn
