#pragma once

#include "mebnn/dataset.hpp"
#include "mebnn/inference.hpp"
#include "mebnn/netspec.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mebnn {

// Multiply-accumulate counts as 2 FLOPs; elementwise, pooling and softmax layers cost 0.
std::uint64_t layer_flops(const LayerSpec& layer, const Shape& input_shape);
std::uint64_t network_flops(const NetworkSpec& net);

struct FlopReport {
    // Deterministic prefix executed once per input.
    std::uint64_t flop_main = 0;
    std::uint64_t flop_exit_total = 0;
    // Work re-executed per sample at each exit.
    std::vector<std::uint64_t> per_exit;
    double alpha = 0.0;

    std::size_t n_exit() const noexcept { return per_exit.size(); }
};

FlopReport make_flop_report(std::uint64_t flop_main, std::vector<std::uint64_t> per_exit);
FlopReport count_flops(const MultiExitSpec& me);

// N_sample * (FLOP_main + FLOP_exit)
std::uint64_t cost_single_exit(const FlopReport& report, std::uint64_t n_sample);
// FLOP_main + (N_sample / N_exit) * FLOP_exit. With `strict`, N_exit must divide N_sample.
double cost_multi_exit(const FlopReport& report, std::uint64_t n_sample, std::uint64_t n_exit, bool strict = false);
// (1 + alpha) / (1 / N_sample + alpha / N_exit)
double reduction_rate(double alpha, std::uint64_t n_sample, std::uint64_t n_exit);

// Equal-width confidence bins over [0, 1]; ECE = sum_b |b|/n * |acc(b) - conf(b)|.
double expected_calibration_error(std::span<const ProbVector> probs, std::span<const int> labels,
                                  std::size_t n_bins = 15);

std::size_t argmax(const ProbVector& p);
double accuracy(std::span<const ProbVector> probs, std::span<const int> labels);

// -sum p ln p in nats, with 0 ln 0 = 0.
double predictive_entropy(const ProbVector& probs);

// Mean predictive entropy of the full ensemble over Gaussian noise inputs.
double average_predictive_entropy(const BayesianRunner& runner, const NoiseSpec& noise, std::size_t n_pass,
                                  std::uint64_t seed);
double average_predictive_entropy(const MultiExitSpec& me, const WeightStore& weights, const NoiseSpec& noise,
                                  std::size_t n_pass, std::uint64_t seed);

struct MetricsReport {
    double accuracy = 0.0;
    double ece = 0.0;
    double ape = 0.0;
    // Multi-exit cost relative to the single-exit deterministic baseline.
    double flops_fraction = 1.0;
    // Average executed cost under confidence-based exiting, when a threshold is set.
    std::optional<double> flops_fraction_early_exit;
    std::uint64_t n_sample = 1;

    void validate() const;
    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

nlohmann::json metrics_to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& m);

}  // namespace mebnn
