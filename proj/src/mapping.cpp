#include "mebnn/mapping.hpp"

#include "mebnn/error.hpp"

#include <algorithm>
#include <fstream>

namespace mebnn {

using nlohmann::json;

bool Resources::fits_within(const Resources& b) const
{
    return dsp <= b.dsp && bram <= b.bram && lut <= b.lut && ff <= b.ff;
}

namespace {

json resources_json(const Resources& r)
{
    return {{"dsp", r.dsp}, {"bram", r.bram}, {"lut", r.lut}, {"ff", r.ff}};
}

Resources resources_from(const json& j, const std::string& where)
{
    for (const auto& [key, value] : j.items())
        if (key != "dsp" && key != "bram" && key != "lut" && key != "ff")
            throw ParseError("unknown key '" + key + "' in " + where);
    return {j.at("dsp").get<double>(), j.at("bram").get<double>(), j.at("lut").get<double>(), j.at("ff").get<double>()};
}

bool all_positive(const Resources& r)
{
    return r.dsp > 0 && r.bram > 0 && r.lut > 0 && r.ff > 0;
}

}  // namespace

void HardwareModel::validate() const
{
    if (!(ops_per_cycle_per_engine > 0) || !(clock_mhz > 0))
        throw InvalidArgument("hardware model: ops_per_cycle_per_engine and clock_mhz must be positive");
    if (!all_positive(engine_cost) || !all_positive(budget))
        throw InvalidArgument("hardware model: engine cost and budget entries must be positive");
    if (!(rng_lut > 0) || !(mask_rom_bram > 0))
        throw InvalidArgument("hardware model: dropout unit costs must be positive");
    if (!engine_cost.fits_within(budget))
        throw InvalidArgument("hardware model: budget cannot hold a single engine");
}

void to_json(json& j, const HardwareModel& hw)
{
    j = {{"name", hw.name},
         {"ops_per_cycle_per_engine", hw.ops_per_cycle_per_engine},
         {"clock_mhz", hw.clock_mhz},
         {"engine_cost", resources_json(hw.engine_cost)},
         {"budget", resources_json(hw.budget)},
         {"dropout_unit_cost", {{"rng_lut", hw.rng_lut}, {"mask_rom_bram", hw.mask_rom_bram}}},
         {"strategy", hw.strategy}};
}

void from_json(const json& j, HardwareModel& hw)
{
    if (!j.is_object())
        throw ParseError("hardware model must be an object");
    hw = HardwareModel{};
    for (const auto& [key, value] : j.items()) {
        if (key == "name")
            hw.name = value.get<std::string>();
        else if (key == "ops_per_cycle_per_engine")
            hw.ops_per_cycle_per_engine = value.get<double>();
        else if (key == "clock_mhz")
            hw.clock_mhz = value.get<double>();
        else if (key == "engine_cost")
            hw.engine_cost = resources_from(value, "engine_cost");
        else if (key == "budget")
            hw.budget = resources_from(value, "budget");
        else if (key == "dropout_unit_cost") {
            for (const auto& [k2, v2] : value.items()) {
                if (k2 == "rng_lut")
                    hw.rng_lut = v2.get<double>();
                else if (k2 == "mask_rom_bram")
                    hw.mask_rom_bram = v2.get<double>();
                else
                    throw ParseError("unknown key '" + k2 + "' in dropout_unit_cost");
            }
        } else if (key == "strategy")
            hw.strategy = value.get<std::string>();
        else
            throw ParseError("unknown key '" + key + "' in hardware model");
    }
    hw.validate();
}

HardwareModel load_hardware_model(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open hardware model '" + path + "'");
    try {
        return json::parse(in).get<HardwareModel>();
    } catch (const json::exception& e) {
        throw ParseError("malformed hardware model '" + path + "': " + e.what());
    }
}

std::string to_string(MappingStrategy s)
{
    switch (s) {
    case MappingStrategy::spatial: return "spatial";
    case MappingStrategy::temporal: return "temporal";
    case MappingStrategy::hybrid: return "hybrid";
    }
    return "?";
}

MappingStrategy mapping_strategy_from_string(const std::string& text)
{
    if (text == "spatial")
        return MappingStrategy::spatial;
    if (text == "temporal")
        return MappingStrategy::temporal;
    if (text == "hybrid")
        return MappingStrategy::hybrid;
    throw ParseError("unknown mapping strategy '" + text + "'");
}

void to_json(json& j, const MappingPlan& plan)
{
    j = {{"strategy", to_string(plan.strategy)},
         {"n_sample", plan.n_sample},
         {"n_engines", plan.n_engines},
         {"rounds", plan.rounds},
         {"sample_assignment", plan.sample_assignment}};
}

void from_json(const json& j, MappingPlan& plan)
{
    plan.strategy = mapping_strategy_from_string(j.at("strategy").get<std::string>());
    plan.n_sample = j.at("n_sample").get<std::size_t>();
    plan.n_engines = j.at("n_engines").get<std::size_t>();
    plan.rounds = j.at("rounds").get<std::size_t>();
    plan.sample_assignment = j.at("sample_assignment").get<std::vector<std::vector<std::size_t>>>();
}

MappingPlan build_mapping(std::size_t n_sample, std::size_t n_engines)
{
    if (n_sample < 1 || n_engines < 1 || n_engines > n_sample)
        throw InvalidArgument("build_mapping: need 1 <= n_engines (" + std::to_string(n_engines) + ") <= n_sample ("
                              + std::to_string(n_sample) + ")");
    MappingPlan plan;
    plan.n_sample = n_sample;
    plan.n_engines = n_engines;
    plan.rounds = (n_sample + n_engines - 1) / n_engines;
    if (n_engines == n_sample)
        plan.strategy = MappingStrategy::spatial;
    else if (n_engines == 1)
        plan.strategy = MappingStrategy::temporal;
    else
        plan.strategy = MappingStrategy::hybrid;
    plan.sample_assignment.assign(n_engines, {});
    for (std::size_t s = 0; s < n_sample; ++s)
        plan.sample_assignment[s % n_engines].push_back(s);
    return plan;
}

LatencyEstimate estimate_latency(const MappingPlan& plan, const FlopReport& report, const HardwareModel& hw)
{
    const double ops = hw.ops_per_cycle_per_engine;
    const double per_sample_exit =
        report.n_exit() ? static_cast<double>(report.flop_exit_total) / static_cast<double>(report.n_exit()) : 0.0;
    LatencyEstimate est;
    est.main_cycles = static_cast<double>(report.flop_main) / ops;
    est.exit_cycles_per_round = per_sample_exit / ops;
    est.cycles = est.main_cycles + static_cast<double>(plan.rounds) * est.exit_cycles_per_round;
    est.ms = est.cycles / (hw.clock_mhz * 1e3);
    return est;
}

ResourceEstimate estimate_resources(const MappingPlan& plan, const HardwareModel& hw)
{
    ResourceEstimate est;
    est.used = hw.engine_cost * static_cast<double>(plan.n_engines);
    est.fits = est.used.fits_within(hw.budget);
    return est;
}

ResourceEstimate estimate_resources(const MappingPlan& plan, const MultiExitSpec& me, const HardwareModel& hw)
{
    ResourceEstimate est = estimate_resources(plan, hw);
    const auto layers = static_cast<double>(me.dropout_layer_count());
    if (me.dropout && me.dropout->kind == DropoutKind::mcd)
        est.used.lut += layers * hw.rng_lut;
    else if (me.dropout)
        est.used.bram += layers * hw.mask_rom_bram;
    est.fits = est.used.fits_within(hw.budget);
    return est;
}

namespace {

bool dominates(const MappingOption& a, const MappingOption& b)
{
    const auto& ra = a.resources.used;
    const auto& rb = b.resources.used;
    const bool no_worse = a.latency.cycles <= b.latency.cycles && ra.fits_within(rb);
    const bool better = a.latency.cycles < b.latency.cycles || ra.dsp < rb.dsp || ra.bram < rb.bram
                        || ra.lut < rb.lut || ra.ff < rb.ff;
    return no_worse && better;
}

}  // namespace

std::vector<MappingOption> pareto_mappings(std::size_t n_sample, const FlopReport& report, const HardwareModel& hw,
                                           const MultiExitSpec* me)
{
    if (n_sample < 1)
        throw InvalidArgument("pareto_mappings: n_sample must be >= 1");
    std::vector<MappingOption> all;
    for (std::size_t e = 1; e <= n_sample; ++e) {
        MappingOption opt;
        opt.plan = build_mapping(n_sample, e);
        opt.latency = estimate_latency(opt.plan, report, hw);
        opt.resources = me ? estimate_resources(opt.plan, *me, hw) : estimate_resources(opt.plan, hw);
        all.push_back(std::move(opt));
    }
    std::vector<MappingOption> front;
    for (const auto& cand : all) {
        const bool dominated =
            std::any_of(all.begin(), all.end(), [&](const MappingOption& o) { return dominates(o, cand); });
        if (!dominated)
            front.push_back(cand);
    }
    std::stable_sort(front.begin(), front.end(), [](const MappingOption& a, const MappingOption& b) {
        return a.latency.cycles < b.latency.cycles;
    });
    return front;
}

}  // namespace mebnn
