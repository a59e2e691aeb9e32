#pragma once

#include "mebnn/dropout.hpp"
#include "mebnn/layers.hpp"
#include "mebnn/netspec.hpp"
#include "mebnn/weights.hpp"

#include "json.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mebnn {

using ProbVector = std::vector<double>;

// Deterministic trunk activations, one entry per exit. When partial dropout
// spills into the trunk, an exit's entry is the last activation before the
// first dropout point on its path and `resume_at` says where to continue.
struct CachedFeatures {
    struct Entry {
        std::string attach_after;
        std::size_t resume_at = 0;  // first trunk index still to run per sample
        Tensor features;
    };
    std::vector<Entry> entries;

    const Tensor& at(const std::string& attach_after) const;
};

// Per-exit, per-pass class-probability samples.
struct PredictionSet {
    std::size_t n_exit = 0;
    std::size_t n_pass = 0;
    std::size_t class_count = 0;
    // samples[exit][pass]
    std::vector<std::vector<ProbVector>> samples;

    std::size_t n_sample() const noexcept { return n_exit * n_pass; }
    friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
};

nlohmann::json prediction_set_to_json(const PredictionSet& preds, std::uint64_t seed, const DropoutConfig* cfg);

enum class ExitMode { per_exit, ensemble_so_far };
std::string to_string(ExitMode mode);
ExitMode exit_mode_from_string(const std::string& text);

struct ExitDecision {
    ProbVector probs;
    int exit_taken = 1;
    double confidence = 0.0;
    ExitMode mode = ExitMode::per_exit;
};

// Mask sets for every dropout point of a Masksembles network, keyed by layer id.
std::map<std::string, MaskSet> build_mask_sets(const MultiExitSpec& me);

// Compiled form of a multi-exit network ready for repeated execution: weights
// quantized once, masks generated once.
class BayesianRunner {
public:
    BayesianRunner(MultiExitSpec me, const WeightStore& weights, std::optional<QFormat> qformat = std::nullopt);

    const MultiExitSpec& spec() const noexcept { return me_; }
    const std::map<std::string, MaskSet>& masks() const noexcept { return masks_; }

    CachedFeatures run_trunk(const Tensor& input, ExecStats* stats = nullptr) const;
    // One exit-head pass (plus any post-cache trunk segment) with dropout
    // realization `pass`.
    ProbVector run_exit_pass(const CachedFeatures& cached, std::size_t exit_pos, std::size_t pass, std::uint64_t seed,
                             ExecStats* stats = nullptr) const;
    std::vector<ProbVector> run_exit_samples(const CachedFeatures& cached, std::size_t exit_pos, std::size_t n_pass,
                                             std::uint64_t seed, ExecStats* stats = nullptr) const;
    PredictionSet predict(const Tensor& input, std::size_t n_pass, std::uint64_t seed, ExecStats* stats = nullptr) const;
    ExitDecision confidence_exit(const Tensor& input, double threshold, ExitMode mode, std::size_t n_pass,
                                 std::uint64_t seed, ExecStats* stats = nullptr) const;

    // Reference path without caching: every sample re-runs the full network
    // from the raw input.
    ProbVector run_uncached_sample(const Tensor& input, std::size_t exit_pos, std::size_t pass,
                                   std::uint64_t seed) const;

private:
    Tensor apply_layer(const LayerSpec& layer, const Tensor& x, std::size_t pass, std::uint64_t seed,
                       ExecStats* stats) const;
    ProbVector finish_head(const std::vector<LayerSpec>& head, Tensor x, std::size_t pass, std::uint64_t seed,
                           ExecStats* stats) const;
    void check_pass_count(std::size_t n_pass) const;

    MultiExitSpec me_;
    WeightStore weights_;
    std::optional<QFormat> qformat_;
    std::map<std::string, MaskSet> masks_;
    std::size_t boundary_ = 0;
};

// Free-function forms of the runner methods.
CachedFeatures run_trunk(const MultiExitSpec& me, const Tensor& input, const WeightStore& weights,
                         const std::optional<QFormat>& qformat = std::nullopt);
std::vector<ProbVector> run_exit_samples(const CachedFeatures& cached, const MultiExitSpec& me, int exit_index,
                                         std::size_t n_pass, const WeightStore& weights, std::uint64_t seed);
PredictionSet predict(const MultiExitSpec& me, const Tensor& input, std::size_t n_pass, const WeightStore& weights,
                      std::uint64_t seed, const std::optional<QFormat>& qformat = std::nullopt);
ExitDecision confidence_exit(const MultiExitSpec& me, const Tensor& input, double threshold, ExitMode mode,
                             const WeightStore& weights, std::size_t n_pass, std::uint64_t seed);

// Mean of all samples from exits 1..upto_exit (all exits when unset).
ProbVector ensemble(const PredictionSet& preds, std::optional<std::size_t> upto_exit = std::nullopt);
// Mean of the samples of a single exit (1-based).
ProbVector exit_mean(const PredictionSet& preds, std::size_t exit_index);

}  // namespace mebnn
