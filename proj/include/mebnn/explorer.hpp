#pragma once

#include "mebnn/dataset.hpp"
#include "mebnn/dropout.hpp"
#include "mebnn/inference.hpp"
#include "mebnn/mapping.hpp"
#include "mebnn/metrics.hpp"
#include "mebnn/netspec.hpp"
#include "mebnn/trainer.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mebnn {

struct DesignPoint {
    DropoutKind dropout_kind = DropoutKind::mcd;
    // keep_rate for MCD, mask scale for Masksembles
    double dropout_param = 0.75;
    std::size_t n_exit = 1;
    std::size_t n_pass = 1;
    int bitwidth = 16;
    double channel_fraction = 1.0;
    // 0 means one engine per sample (fully spatial)
    std::size_t mapping_engines = 0;
    std::optional<double> threshold;

    std::size_t n_sample() const noexcept { return n_exit * n_pass; }
    std::size_t engines() const noexcept { return mapping_engines ? mapping_engines : n_sample(); }
    std::string label() const;
    friend bool operator==(const DesignPoint&, const DesignPoint&) = default;
};

void to_json(nlohmann::json& j, const DesignPoint& dp);
void from_json(const nlohmann::json& j, DesignPoint& dp);

struct ExploreGrids {
    std::vector<DropoutKind> kinds{DropoutKind::mcd};
    // MCD grid is given as drop rates; points carry keep_rate = 1 - rate.
    std::vector<double> mcd_drop_rates{0.125, 0.25, 0.375, 0.5};
    std::vector<double> masksembles_scales{3.0, 4.0, 5.0, 6.0};
    std::vector<std::size_t> n_exit{1};
    std::vector<std::size_t> n_pass{1};
    std::vector<int> bitwidth{16};
    std::vector<double> channel_fraction{1.0};
    std::vector<std::size_t> mapping_engines{0};
    // empty: no confidence exiting
    std::vector<double> thresholds;
};

void from_json(const nlohmann::json& j, ExploreGrids& g);
void to_json(nlohmann::json& j, const ExploreGrids& g);

// Cartesian product in knob order: kind, dropout_param, n_exit, n_pass,
// bitwidth, channel_fraction, mapping_engines, threshold (last varies fastest).
std::vector<DesignPoint> enumerate_design_points(const ExploreGrids& grids);

enum class ChannelMode { retrain, slice };
std::string to_string(ChannelMode m);
ChannelMode channel_mode_from_string(const std::string& text);

QFormat qformat_for_bitwidth(int bits);

struct EvalSettings {
    NetworkSpec base_net;
    Dataset train;
    Dataset test;
    NoiseSpec noise;
    HardwareModel hw;
    TrainHyperParams training;
    std::uint64_t seed = 0;
    std::size_t dropout_depth = 1;
    std::size_t num_masks = 8;
    ChannelMode channel_mode = ChannelMode::retrain;
    ExitMode exit_mode = ExitMode::per_exit;
};

struct PointResult {
    DesignPoint point;
    std::size_t index = 0;
    bool ok = false;
    std::string error;
    MetricsReport metrics;
    LatencyEstimate latency;
    ResourceEstimate resources;
};

// The multi-exit network a design point describes (before training).
MultiExitSpec build_design(const DesignPoint& dp, const NetworkSpec& base_net, std::size_t dropout_depth,
                           std::size_t num_masks);

// Accuracy/ECE of the all-sample ensemble (or of the confidence-exit decision
// when a threshold is given), aPE over Gaussian noise and the multi-exit FLOP cost.
MetricsReport evaluate_network(const MultiExitSpec& me, const WeightStore& weights, const std::optional<QFormat>& q,
                               const Dataset& test, const NoiseSpec& noise, std::size_t n_pass, std::uint64_t seed,
                               std::optional<double> threshold = std::nullopt,
                               ExitMode exit_mode = ExitMode::per_exit);

// Never throws for per-point build or training failures; they are recorded
// in the result.
PointResult evaluate_design_point(const DesignPoint& dp, const EvalSettings& settings, std::size_t index = 0);

// Evaluates every point, fanning out over `jobs` threads. Result order
// follows `points` regardless of the job count.
std::vector<PointResult> run_exploration(const std::vector<DesignPoint>& points, const EvalSettings& settings,
                                         std::size_t jobs = 1);

struct Constraints {
    std::optional<double> min_accuracy;
    std::optional<double> max_ece;
    std::optional<double> min_ape;
    std::optional<double> max_flops_fraction;
    std::optional<double> max_latency_ms;
    std::optional<Resources> resource_budget;

    bool any_active() const noexcept;
    bool satisfied_by(const PointResult& r) const;
};

void from_json(const nlohmann::json& j, Constraints& c);
void to_json(nlohmann::json& j, const Constraints& c);

enum class Metric { accuracy, ece, ape, flops, latency };
std::string to_string(Metric m);
Metric metric_from_string(const std::string& text);

struct PriorityTerm {
    Metric metric = Metric::accuracy;
    bool maximize = true;
    double tolerance = 0.0;
};

// Default direction and tie tolerance of a metric.
PriorityTerm default_priority_term(Metric m);

struct Priority {
    std::vector<PriorityTerm> terms;
    void validate() const;
};

Priority priority_of(std::initializer_list<Metric> metrics);
void from_json(const nlohmann::json& j, Priority& p);
void to_json(nlohmann::json& j, const Priority& p);

double metric_value(const PointResult& r, Metric m);

// Strict weak "a ranks before b". Values within a metric's tolerance bucket
// tie on that metric; full ties fall back to exact values, then enumeration
// index, which makes the order total.
bool ranks_before(const PointResult& a, const PointResult& b, const Priority& priority);

struct RankOutcome {
    std::vector<PointResult> ranked;
    bool empty() const noexcept { return ranked.empty(); }
    const PointResult& best() const;
};

RankOutcome filter_and_rank(const std::vector<PointResult>& results, const Constraints& constraints,
                            const Priority& priority);

struct OptSelections {
    std::optional<PointResult> acc_opt;
    std::optional<PointResult> ece_opt;
    std::optional<PointResult> ape_opt;
};

// Single-metric rankings used for the Acc-Opt / ECE-Opt / aPE-Opt columns.
OptSelections opt_selections(const std::vector<PointResult>& results, const Constraints& constraints);

std::string ledger_csv_header();
std::string ledger_csv(const std::vector<PointResult>& results, const RankOutcome& ranking);
nlohmann::json ledger_json(const std::vector<PointResult>& results, const RankOutcome& ranking);

// Exploration config file; relative paths resolve against the file's directory.
struct ExploreConfig {
    std::string network_path;
    std::optional<std::string> train_path;
    std::optional<std::string> test_path;
    // synthetic blobs when no CSVs are given
    std::size_t blobs_per_class = 100;
    std::size_t blobs_classes = 3;
    double blobs_radius = 3.0;
    double blobs_spread = 1.0;
    double train_fraction = 0.7;
    std::optional<std::string> hardware_model_path;
    std::uint64_t seed = 0;
    ExploreGrids grids;
    Constraints constraints;
    Priority priority;
    TrainHyperParams training;
    std::size_t noise_count = 100;
    std::size_t dropout_depth = 1;
    std::size_t num_masks = 8;
    ChannelMode channel_mode = ChannelMode::retrain;
    ExitMode exit_mode = ExitMode::per_exit;
};

ExploreConfig parse_explore_config(const nlohmann::json& j, const std::string& base_dir);
ExploreConfig load_explore_config(const std::string& path);

// Loads the network, data and hardware model a config refers to. `hw_override`
// wins over the config's own hardware model path.
EvalSettings make_settings(const ExploreConfig& cfg, const std::optional<HardwareModel>& hw_override = std::nullopt);

}  // namespace mebnn
