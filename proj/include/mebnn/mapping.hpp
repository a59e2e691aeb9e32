#pragma once

#include "mebnn/metrics.hpp"
#include "mebnn/netspec.hpp"

#include "json.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace mebnn {

struct Resources {
    double dsp = 0.0;
    double bram = 0.0;
    double lut = 0.0;
    double ff = 0.0;

    Resources operator+(const Resources& o) const { return {dsp + o.dsp, bram + o.bram, lut + o.lut, ff + o.ff}; }
    Resources operator*(double k) const { return {dsp * k, bram * k, lut * k, ff * k}; }
    bool fits_within(const Resources& budget) const;
    friend bool operator==(const Resources&, const Resources&) = default;
};

// Coarse accelerator model: every MC engine retires ops_per_cycle_per_engine
// FLOPs per cycle. Reuse factors and the synthesis strategy are folded into
// that throughput figure.
struct HardwareModel {
    std::string name = "ku115-class (illustrative)";
    double ops_per_cycle_per_engine = 1024.0;
    double clock_mhz = 200.0;
    Resources engine_cost{512.0, 64.0, 40000.0, 60000.0};
    Resources budget{5520.0, 2160.0, 663360.0, 1326720.0};
    // LUTs of one MCD random-number unit; BRAMs of one Masksembles mask ROM.
    double rng_lut = 400.0;
    double mask_rom_bram = 1.0;
    std::string strategy = "Latency";

    void validate() const;
};

void to_json(nlohmann::json& j, const HardwareModel& hw);
void from_json(const nlohmann::json& j, HardwareModel& hw);
HardwareModel load_hardware_model(const std::string& path);

enum class MappingStrategy { spatial, temporal, hybrid };
std::string to_string(MappingStrategy s);
MappingStrategy mapping_strategy_from_string(const std::string& text);

struct MappingPlan {
    MappingStrategy strategy = MappingStrategy::temporal;
    std::size_t n_sample = 1;
    std::size_t n_engines = 1;
    std::size_t rounds = 1;
    // sample_assignment[engine] = sample indices in execution order
    std::vector<std::vector<std::size_t>> sample_assignment;

    friend bool operator==(const MappingPlan&, const MappingPlan&) = default;
};

void to_json(nlohmann::json& j, const MappingPlan& plan);
void from_json(const nlohmann::json& j, MappingPlan& plan);

// Round-robin assignment of n_sample MC samples onto n_engines engines.
MappingPlan build_mapping(std::size_t n_sample, std::size_t n_engines);

struct LatencyEstimate {
    double main_cycles = 0.0;
    double exit_cycles_per_round = 0.0;
    double cycles = 0.0;
    double ms = 0.0;
    friend bool operator==(const LatencyEstimate&, const LatencyEstimate&) = default;
};

// cycles = FLOP_main / ops + rounds * (per-sample exit FLOPs / ops), where the
// per-sample exit work is FLOP_exit / N_exit.
LatencyEstimate estimate_latency(const MappingPlan& plan, const FlopReport& report, const HardwareModel& hw);

struct ResourceEstimate {
    Resources used;
    bool fits = true;
    friend bool operator==(const ResourceEstimate&, const ResourceEstimate&) = default;
};

// engines * engine_cost plus one dropout unit per dropout layer (LUT-based RNG
// for MCD, a mask ROM in BRAM for Masksembles).
ResourceEstimate estimate_resources(const MappingPlan& plan, const MultiExitSpec& me, const HardwareModel& hw);
ResourceEstimate estimate_resources(const MappingPlan& plan, const HardwareModel& hw);

struct MappingOption {
    MappingPlan plan;
    LatencyEstimate latency;
    ResourceEstimate resources;
};

// Non-dominated (latency, resources) plans over engine counts 1..n_sample,
// sorted by latency.
std::vector<MappingOption> pareto_mappings(std::size_t n_sample, const FlopReport& report, const HardwareModel& hw,
                                           const MultiExitSpec* me = nullptr);

}  // namespace mebnn
