#include "mebnn/emitter.hpp"

#include "mebnn/error.hpp"
#include "mebnn/rng.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace mebnn {

using nlohmann::json;

PlanEstimates make_estimates(const MappingPlan& plan, const MultiExitSpec& me, const HardwareModel& hw,
                             std::optional<MetricsReport> metrics)
{
    PlanEstimates e;
    e.latency = estimate_latency(plan, count_flops(me), hw);
    e.resources = estimate_resources(plan, me, hw);
    e.budget = hw.budget;
    e.metrics = std::move(metrics);
    return e;
}

DesignPoint design_point_for(const MultiExitSpec& me, std::size_t n_pass, int bitwidth, std::size_t engines,
                             std::optional<double> threshold)
{
    DesignPoint dp;
    dp.n_exit = me.n_exit();
    dp.n_pass = n_pass;
    dp.bitwidth = bitwidth;
    dp.mapping_engines = engines;
    dp.threshold = threshold;
    if (me.dropout) {
        dp.dropout_kind = me.dropout->kind;
        dp.dropout_param = me.dropout->kind == DropoutKind::mcd ? me.dropout->keep_rate : me.dropout->scale;
    } else {
        dp.dropout_param = 1.0;
    }
    return dp;
}

namespace {

std::string segment_name(Segment s)
{
    return s == Segment::trunk ? "trunk" : "head";
}

std::map<std::string, Shape> layer_input_shapes(const MultiExitSpec& me)
{
    std::map<std::string, Shape> shapes;
    for (std::size_t k = 0; k < me.n_exit(); ++k) {
        const NetworkSpec path = exit_path_network(me, k);
        const auto outs = path.layer_output_shapes();
        for (std::size_t i = 0; i < path.layers.size(); ++i)
            shapes[path.layers[i].id] = i == 0 ? path.input_shape : outs[i - 1];
    }
    return shapes;
}

std::string mcd_pseudocode(const DropoutRecord& r)
{
    const bool channel = r.granularity == Granularity::channel;
    std::string s = fmt::format("// {}: MCD layer, keep_rate {:g}, {} {}\n", r.layer_id, *r.keep_rate, r.units,
                                channel ? "channels" : "elements");
    s += fmt::format("for (i = 0; i < {}; i++) {{\n", r.units);
    s += "  #pragma PIPELINE\n";
    s += fmt::format("  u = philox_uniform(seed, sample_index, 0x{:08x}, i)\n", r.rng->layer_hash);
    s += fmt::format("  temp = (u > {:g}) ? 0 : input[i]\n", *r.keep_rate);
    if (r.inverted)
        s += fmt::format("  output[i] = temp / {:g}\n", *r.keep_rate);
    else
        s += fmt::format("  output[i] = temp * {:g}\n", *r.keep_rate);
    s += "}\n";
    return s;
}

std::string masksembles_pseudocode(const DropoutRecord& r)
{
    std::string s = fmt::format("// {}: Masksembles layer, {} masks x {} features, scale {:g}\n", r.layer_id,
                                r.masks->num_masks(), r.masks->feature_count, r.masks->scale);
    s += fmt::format("for (i = 0; i < {}; i++) {{\n", r.units);
    s += "  #pragma PIPELINE\n";
    s += "  output[i] = generated_masks[mask_index][i] ? input[i] : 0\n";
    s += "}\n";
    return s;
}

void check_consistent(bool ok, const std::string& what)
{
    if (!ok)
        throw InvalidArgument("inconsistent plan inputs: " + what);
}

}  // namespace

AcceleratorPlan emit_plan(const DesignPoint& dp, const MappingPlan& plan, const MultiExitSpec& me,
                          const std::map<std::string, MaskSet>* masks, const PlanEstimates& estimates,
                          const std::string& hls_strategy)
{
    if (const auto diags = validate(me); !diags.empty())
        throw InvalidArgument("inconsistent plan inputs: network invalid at '" + diags.front().layer_id
                              + "': " + diags.front().message);
    check_consistent(dp.n_exit == me.n_exit(), "design point n_exit differs from the network's exit count");
    check_consistent(plan.n_sample == dp.n_sample(), "mapping plan n_sample differs from n_pass * n_exit");
    check_consistent(plan.n_engines == dp.engines(), "mapping plan engine count differs from the design point");
    check_consistent(plan.sample_assignment.size() == plan.n_engines, "sample assignment does not cover every engine");
    {
        std::vector<std::size_t> seen;
        for (const auto& e : plan.sample_assignment)
            seen.insert(seen.end(), e.begin(), e.end());
        std::sort(seen.begin(), seen.end());
        bool partition = seen.size() == plan.n_sample;
        for (std::size_t i = 0; partition && i < seen.size(); ++i)
            partition = seen[i] == i;
        check_consistent(partition, "sample assignment is not a partition of the samples");
    }
    check_consistent(is_supported_bitwidth(dp.bitwidth), "unsupported bitwidth");
    if (me.dropout) {
        check_consistent(me.dropout->kind == dp.dropout_kind, "dropout kind differs from the design point");
        const double param = me.dropout->kind == DropoutKind::mcd ? me.dropout->keep_rate : me.dropout->scale;
        check_consistent(param == dp.dropout_param, "dropout parameter differs from the design point");
    }

    AcceleratorPlan out;
    out.design_point = dp;
    out.mapping = plan;
    out.hls_strategy = hls_strategy;
    out.estimates = estimates;

    const QFormat q = qformat_for_bitwidth(dp.bitwidth);
    const std::size_t boundary = me.bayes_boundary();
    std::size_t trunk_pos = 0;
    for (const auto& ref : me.all_layers()) {
        LayerRecord r;
        r.layer_id = ref.layer->id;
        r.kind = ref.layer->kind;
        r.segment = segment_name(ref.segment);
        r.exit_index = ref.exit_index;
        const bool cached = ref.segment == Segment::trunk && trunk_pos++ < boundary;
        r.engine = cached ? "trunk" : "mc";
        const bool terminal_softmax = ref.segment == Segment::head && ref.layer->kind == LayerKind::softmax;
        if (!terminal_softmax)
            r.quant = q;
        out.layers.push_back(std::move(r));
    }

    const auto generated = build_mask_sets(me);
    const auto shapes = layer_input_shapes(me);
    for (const auto& site : me.dropout_sites) {
        DropoutRecord r;
        r.layer_id = site.layer_id;
        r.kind = me.dropout->kind;
        r.segment = segment_name(site.segment);
        r.exit_index = site.exit_index;
        if (r.kind == DropoutKind::mcd) {
            r.keep_rate = me.dropout->keep_rate;
            r.granularity = me.dropout->granularity;
            r.inverted = me.dropout->inverted;
            const Shape& in = shapes.at(site.layer_id);
            r.units = r.granularity == Granularity::channel ? dropout_unit_count(in) : shape_numel(in);
            RngSpec rng;
            rng.layer_hash = fnv1a32(site.layer_id);
            r.rng = rng;
            r.pseudocode = mcd_pseudocode(r);
        } else {
            const MaskSet& expected = generated.at(site.layer_id);
            if (masks) {
                const auto it = masks->find(site.layer_id);
                check_consistent(it != masks->end(), "no mask table for '" + site.layer_id + "'");
                check_consistent(it->second == expected, "mask table for '" + site.layer_id
                                                             + "' differs from the generated masks");
            }
            r.masks = expected;
            r.units = expected.feature_count;
            r.pseudocode = masksembles_pseudocode(r);
        }
        out.dropout.push_back(std::move(r));
    }
    return out;
}

namespace {

json qformat_json(const QFormat& q)
{
    return {{"total_bits", q.total_bits},
            {"integer_bits", q.integer_bits},
            {"rounding", q.mode == RoundingMode::truncate ? "truncate" : "round_to_nearest_even"},
            {"saturating", q.saturating}};
}

QFormat qformat_from(const json& j)
{
    QFormat q;
    q.total_bits = j.at("total_bits").get<int>();
    q.integer_bits = j.at("integer_bits").get<int>();
    const auto mode = j.at("rounding").get<std::string>();
    if (mode == "truncate")
        q.mode = RoundingMode::truncate;
    else if (mode == "round_to_nearest_even")
        q.mode = RoundingMode::round_to_nearest_even;
    else
        throw ParseError("unknown rounding mode '" + mode + "'");
    q.saturating = j.at("saturating").get<bool>();
    q.validate();
    return q;
}

json resources_json(const Resources& r)
{
    return {{"dsp", r.dsp}, {"bram", r.bram}, {"lut", r.lut}, {"ff", r.ff}};
}

Resources resources_from(const json& j)
{
    return {j.at("dsp").get<double>(), j.at("bram").get<double>(), j.at("lut").get<double>(),
            j.at("ff").get<double>()};
}

}  // namespace

json plan_to_json(const AcceleratorPlan& p)
{
    json layers = json::array();
    for (const auto& l : p.layers)
        layers.push_back({{"layer_id", l.layer_id},
                          {"kind", to_string(l.kind)},
                          {"segment", l.segment},
                          {"exit_index", l.exit_index},
                          {"engine", l.engine},
                          {"pipeline", l.pipeline},
                          {"quant", l.quant ? qformat_json(*l.quant) : json(nullptr)}});
    json dropout = json::array();
    for (const auto& d : p.dropout) {
        json r = {{"layer_id", d.layer_id},
                  {"kind", to_string(d.kind)},
                  {"segment", d.segment},
                  {"exit_index", d.exit_index},
                  {"units", d.units}};
        if (d.kind == DropoutKind::mcd) {
            r["keep_rate"] = *d.keep_rate;
            r["granularity"] = to_string(*d.granularity);
            r["inverted"] = d.inverted;
            r["rng"] = {{"generator", d.rng->generator},
                        {"key", d.rng->key},
                        {"counter", d.rng->counter},
                        {"uniform", d.rng->uniform},
                        {"layer_hash", d.rng->layer_hash}};
        } else {
            r["masks"] = *d.masks;
        }
        r["pseudocode"] = d.pseudocode;
        dropout.push_back(std::move(r));
    }
    const auto& e = p.estimates;
    json estimates = {{"latency",
                       {{"main_cycles", e.latency.main_cycles},
                        {"exit_cycles_per_round", e.latency.exit_cycles_per_round},
                        {"cycles", e.latency.cycles},
                        {"ms", e.latency.ms}}},
                      {"resources", resources_json(e.resources.used)},
                      {"fits", e.resources.fits},
                      {"budget", resources_json(e.budget)},
                      {"metrics", e.metrics ? metrics_to_json(*e.metrics) : json(nullptr)}};
    return {{"schema_version", p.schema_version}, {"design_point", p.design_point},
            {"mapping", p.mapping},               {"hls_strategy", p.hls_strategy},
            {"layers", layers},                   {"dropout", dropout},
            {"estimates", estimates}};
}

AcceleratorPlan plan_from_json(const json& j)
{
    AcceleratorPlan p;
    p.schema_version = j.at("schema_version").get<int>();
    if (p.schema_version != plan_schema_version)
        throw ParseError("unsupported plan schema_version " + std::to_string(p.schema_version));
    p.design_point = j.at("design_point").get<DesignPoint>();
    p.mapping = j.at("mapping").get<MappingPlan>();
    p.hls_strategy = j.at("hls_strategy").get<std::string>();
    for (const auto& l : j.at("layers")) {
        LayerRecord r;
        r.layer_id = l.at("layer_id").get<std::string>();
        r.kind = layer_kind_from_string(l.at("kind").get<std::string>());
        r.segment = l.at("segment").get<std::string>();
        r.exit_index = l.at("exit_index").get<int>();
        r.engine = l.at("engine").get<std::string>();
        r.pipeline = l.at("pipeline").get<bool>();
        if (!l.at("quant").is_null())
            r.quant = qformat_from(l.at("quant"));
        p.layers.push_back(std::move(r));
    }
    for (const auto& d : j.at("dropout")) {
        DropoutRecord r;
        r.layer_id = d.at("layer_id").get<std::string>();
        r.kind = dropout_kind_from_string(d.at("kind").get<std::string>());
        r.segment = d.at("segment").get<std::string>();
        r.exit_index = d.at("exit_index").get<int>();
        r.units = d.at("units").get<std::size_t>();
        if (r.kind == DropoutKind::mcd) {
            r.keep_rate = d.at("keep_rate").get<double>();
            r.granularity = granularity_from_string(d.at("granularity").get<std::string>());
            r.inverted = d.at("inverted").get<bool>();
            const auto& g = d.at("rng");
            RngSpec rng;
            rng.generator = g.at("generator").get<std::string>();
            rng.key = g.at("key").get<std::string>();
            rng.counter = g.at("counter").get<std::string>();
            rng.uniform = g.at("uniform").get<std::string>();
            rng.layer_hash = g.at("layer_hash").get<std::uint32_t>();
            r.rng = rng;
        } else {
            r.masks = d.at("masks").get<MaskSet>();
        }
        r.pseudocode = d.at("pseudocode").get<std::string>();
        p.dropout.push_back(std::move(r));
    }
    const auto& e = j.at("estimates");
    const auto& lat = e.at("latency");
    p.estimates.latency = {lat.at("main_cycles").get<double>(), lat.at("exit_cycles_per_round").get<double>(),
                           lat.at("cycles").get<double>(), lat.at("ms").get<double>()};
    p.estimates.resources.used = resources_from(e.at("resources"));
    p.estimates.resources.fits = e.at("fits").get<bool>();
    p.estimates.budget = resources_from(e.at("budget"));
    if (!e.at("metrics").is_null())
        p.estimates.metrics = metrics_from_json(e.at("metrics"));

    // dropout records must point at layers of the plan
    for (const auto& d : p.dropout) {
        const bool found = std::any_of(p.layers.begin(), p.layers.end(), [&](const LayerRecord& l) {
            return l.layer_id == d.layer_id && l.kind == LayerKind::dropout_point;
        });
        if (!found)
            throw ParseError("dropout record '" + d.layer_id + "' does not name a dropout layer of the plan");
    }
    return p;
}

std::string serialize_plan(const AcceleratorPlan& plan)
{
    return plan_to_json(plan).dump(2) + "\n";
}

AcceleratorPlan parse_plan(const std::string& document)
{
    try {
        return plan_from_json(json::parse(document));
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed plan: ") + e.what());
    }
}

std::string render_report(const AcceleratorPlan& p)
{
    const auto& dp = p.design_point;
    const auto& e = p.estimates;
    std::string s;
    s += fmt::format("Accelerator plan (schema {})\n", p.schema_version);
    s += fmt::format("design point  {}\n", dp.label());
    s += fmt::format("mapping       {}, {} engine(s), {} round(s), {} sample(s)\n", to_string(p.mapping.strategy),
                     p.mapping.n_engines, p.mapping.rounds, p.mapping.n_sample);
    s += fmt::format("hls strategy  {}\n", p.hls_strategy);
    s += fmt::format("quantization  {}-bit fixed point\n", dp.bitwidth);
    if (!e.resources.fits) {
        s += "\n";
        s += "!!! WARNING: OVER BUDGET - estimated resources exceed the hardware budget !!!\n";
    }

    s += "\nLatency\n";
    s += fmt::format("  main cycles            {:>14.3f}\n", e.latency.main_cycles);
    s += fmt::format("  exit cycles per round  {:>14.3f}\n", e.latency.exit_cycles_per_round);
    s += fmt::format("  total cycles           {:>14.3f}\n", e.latency.cycles);
    s += fmt::format("  latency (ms)           {:>14.6f}\n", e.latency.ms);

    s += "\nResources      used         budget    status\n";
    auto row = [&](const char* name, double used, double budget) {
        s += fmt::format("  {:<5}{:>12.0f}   {:>12.0f}    {}\n", name, used, budget, used <= budget ? "ok" : "OVER");
    };
    row("dsp", e.resources.used.dsp, e.budget.dsp);
    row("bram", e.resources.used.bram, e.budget.bram);
    row("lut", e.resources.used.lut, e.budget.lut);
    row("ff", e.resources.used.ff, e.budget.ff);

    if (e.metrics) {
        const auto& m = *e.metrics;
        s += "\nMetrics\n";
        s += fmt::format("  accuracy        {:.6f}\n", m.accuracy);
        s += fmt::format("  ece             {:.6f}\n", m.ece);
        s += fmt::format("  ape (nats)      {:.6f}\n", m.ape);
        s += fmt::format("  flops fraction  {:.6f}\n", m.flops_fraction);
        if (m.flops_fraction_early_exit)
            s += fmt::format("  flops fraction (early exit)  {:.6f}\n", *m.flops_fraction_early_exit);
        s += fmt::format("  n_sample        {}\n", m.n_sample);
    }

    s += fmt::format("\nLayers ({})\n", p.layers.size());
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const auto& l = p.layers[i];
        const std::string where = l.exit_index ? fmt::format("exit{}", l.exit_index) : "trunk";
        s += fmt::format("  {:>3}  {:<20} {:<13} {:<6} engine={:<5} {} {}\n", i, l.layer_id, to_string(l.kind), where,
                         l.engine, l.pipeline ? "pipeline" : "sequential",
                         l.quant ? l.quant->to_string() : "float");
    }

    s += fmt::format("\nDropout units ({})\n", p.dropout.size());
    for (const auto& d : p.dropout) {
        if (d.kind == DropoutKind::mcd)
            s += fmt::format("  {:<20} mcd keep_rate={:g} units={} rng={} layer_hash=0x{:08x}\n", d.layer_id,
                             *d.keep_rate, d.units, d.rng->generator, d.rng->layer_hash);
        else
            s += fmt::format("  {:<20} masksembles masks={} features={} scale={:g}\n", d.layer_id,
                             d.masks->num_masks(), d.masks->feature_count, d.masks->scale);
    }
    for (const auto& d : p.dropout)
        s += "\n" + d.pseudocode;
    return s;
}

}  // namespace mebnn
