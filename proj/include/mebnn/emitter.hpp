#pragma once

#include "mebnn/dropout.hpp"
#include "mebnn/explorer.hpp"
#include "mebnn/mapping.hpp"
#include "mebnn/metrics.hpp"
#include "mebnn/netspec.hpp"

#include "json.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mebnn {

inline constexpr int plan_schema_version = 1;

struct LayerRecord {
    std::string layer_id;
    LayerKind kind = LayerKind::dense;
    std::string segment;  // "trunk" or "head"
    int exit_index = 0;   // 0 for trunk layers
    // "trunk": executed once per input; "mc": replicated on every MC engine
    std::string engine;
    bool pipeline = true;
    // unset for the terminal softmax, which stays in floating point
    std::optional<QFormat> quant;
    friend bool operator==(const LayerRecord&, const LayerRecord&) = default;
};

// Counter-based generator description for an MCD unit.
struct RngSpec {
    std::string generator = "philox4x32-10";
    std::string key = "run seed (64 bit)";
    std::string counter = "[draw_lo, draw_hi, sample_index folded to 32 bit, layer_hash]";
    std::string uniform = "(bits64 >> 11) * 2^-53";
    std::uint32_t layer_hash = 0;
    friend bool operator==(const RngSpec&, const RngSpec&) = default;
};

struct DropoutRecord {
    std::string layer_id;
    DropoutKind kind = DropoutKind::mcd;
    std::string segment;
    int exit_index = 1;
    std::size_t units = 0;
    // MCD
    std::optional<double> keep_rate;
    std::optional<Granularity> granularity;
    bool inverted = false;
    std::optional<RngSpec> rng;
    // Masksembles
    std::optional<MaskSet> masks;
    std::string pseudocode;
    friend bool operator==(const DropoutRecord&, const DropoutRecord&) = default;
};

struct PlanEstimates {
    LatencyEstimate latency;
    ResourceEstimate resources;
    Resources budget;
    std::optional<MetricsReport> metrics;
    friend bool operator==(const PlanEstimates&, const PlanEstimates&) = default;
};

// Estimates for a mapping under a hardware model.
PlanEstimates make_estimates(const MappingPlan& plan, const MultiExitSpec& me, const HardwareModel& hw,
                             std::optional<MetricsReport> metrics = std::nullopt);

struct AcceleratorPlan {
    int schema_version = plan_schema_version;
    DesignPoint design_point;
    MappingPlan mapping;
    std::string hls_strategy = "Latency";
    std::vector<LayerRecord> layers;
    std::vector<DropoutRecord> dropout;
    PlanEstimates estimates;
    friend bool operator==(const AcceleratorPlan&, const AcceleratorPlan&) = default;
};

// The design point a multi-exit network already embodies (exit count,
// dropout parameter), completed with the remaining knobs.
DesignPoint design_point_for(const MultiExitSpec& me, std::size_t n_pass, int bitwidth, std::size_t engines,
                             std::optional<double> threshold = std::nullopt);

// `masks` defaults to the tables generate_masks yields for each Masksembles
// point; when given it must match them exactly.
AcceleratorPlan emit_plan(const DesignPoint& dp, const MappingPlan& plan, const MultiExitSpec& me,
                          const std::map<std::string, MaskSet>* masks, const PlanEstimates& estimates,
                          const std::string& hls_strategy = "Latency");

nlohmann::json plan_to_json(const AcceleratorPlan& plan);
AcceleratorPlan plan_from_json(const nlohmann::json& j);
// Pretty-printed JSON with a trailing newline.
std::string serialize_plan(const AcceleratorPlan& plan);
AcceleratorPlan parse_plan(const std::string& document);

std::string render_report(const AcceleratorPlan& plan);

}  // namespace mebnn
