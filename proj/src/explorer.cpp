#include "mebnn/explorer.hpp"

#include "mebnn/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

namespace mebnn {

using nlohmann::json;

std::string DesignPoint::label() const
{
    std::string s = fmt::format("{}:{:g}/exit{}/pass{}/b{}/c{:g}/e{}", to_string(dropout_kind), dropout_param, n_exit,
                                n_pass, bitwidth, channel_fraction, engines());
    if (threshold)
        s += fmt::format("/t{:g}", *threshold);
    return s;
}

void to_json(json& j, const DesignPoint& dp)
{
    j = {{"dropout_kind", to_string(dp.dropout_kind)},
         {"dropout_param", dp.dropout_param},
         {"n_exit", dp.n_exit},
         {"n_pass", dp.n_pass},
         {"n_sample", dp.n_sample()},
         {"bitwidth", dp.bitwidth},
         {"channel_fraction", dp.channel_fraction},
         {"mapping_engines", dp.engines()},
         {"threshold", dp.threshold ? json(*dp.threshold) : json(nullptr)}};
}

void from_json(const json& j, DesignPoint& dp)
{
    dp.dropout_kind = dropout_kind_from_string(j.at("dropout_kind").get<std::string>());
    dp.dropout_param = j.at("dropout_param").get<double>();
    dp.n_exit = j.at("n_exit").get<std::size_t>();
    dp.n_pass = j.at("n_pass").get<std::size_t>();
    dp.bitwidth = j.at("bitwidth").get<int>();
    dp.channel_fraction = j.at("channel_fraction").get<double>();
    dp.mapping_engines = j.at("mapping_engines").get<std::size_t>();
    if (j.contains("threshold") && !j.at("threshold").is_null())
        dp.threshold = j.at("threshold").get<double>();
    else
        dp.threshold.reset();
}

namespace {

template <typename T>
std::vector<T> read_list(const json& j, const std::string& key)
{
    const json& v = j.at(key);
    if (!v.is_array())
        return {v.get<T>()};
    return v.get<std::vector<T>>();
}

}  // namespace

void from_json(const json& j, ExploreGrids& g)
{
    g = ExploreGrids{};
    for (const auto& [key, value] : j.items()) {
        if (key == "dropout_kind") {
            g.kinds.clear();
            for (const auto& s : read_list<std::string>(j, key))
                g.kinds.push_back(dropout_kind_from_string(s));
        } else if (key == "mcd_drop_rate")
            g.mcd_drop_rates = read_list<double>(j, key);
        else if (key == "masksembles_scale")
            g.masksembles_scales = read_list<double>(j, key);
        else if (key == "n_exit")
            g.n_exit = read_list<std::size_t>(j, key);
        else if (key == "n_pass")
            g.n_pass = read_list<std::size_t>(j, key);
        else if (key == "bitwidth")
            g.bitwidth = read_list<int>(j, key);
        else if (key == "channel_fraction")
            g.channel_fraction = read_list<double>(j, key);
        else if (key == "mapping_engines")
            g.mapping_engines = read_list<std::size_t>(j, key);
        else if (key == "threshold")
            g.thresholds = read_list<double>(j, key);
        else
            throw ParseError("unknown grid '" + key + "'");
    }
}

void to_json(json& j, const ExploreGrids& g)
{
    std::vector<std::string> kinds;
    for (auto k : g.kinds)
        kinds.push_back(to_string(k));
    j = {{"dropout_kind", kinds},
         {"mcd_drop_rate", g.mcd_drop_rates},
         {"masksembles_scale", g.masksembles_scales},
         {"n_exit", g.n_exit},
         {"n_pass", g.n_pass},
         {"bitwidth", g.bitwidth},
         {"channel_fraction", g.channel_fraction},
         {"mapping_engines", g.mapping_engines},
         {"threshold", g.thresholds}};
}

std::vector<DesignPoint> enumerate_design_points(const ExploreGrids& g)
{
    auto need = [](bool nonempty, const char* name) {
        if (!nonempty)
            throw InvalidArgument(std::string("empty grid: ") + name);
    };
    need(!g.kinds.empty(), "dropout_kind");
    need(!g.n_exit.empty(), "n_exit");
    need(!g.n_pass.empty(), "n_pass");
    need(!g.bitwidth.empty(), "bitwidth");
    need(!g.channel_fraction.empty(), "channel_fraction");
    need(!g.mapping_engines.empty(), "mapping_engines");
    for (auto k : g.kinds) {
        if (k == DropoutKind::mcd)
            need(!g.mcd_drop_rates.empty(), "mcd_drop_rate");
        else
            need(!g.masksembles_scales.empty(), "masksembles_scale");
    }
    for (int b : g.bitwidth)
        if (!is_supported_bitwidth(b))
            throw InvalidArgument("unsupported bitwidth " + std::to_string(b));
    for (double r : g.mcd_drop_rates)
        if (!(r >= 0.0 && r < 1.0))
            throw InvalidArgument(fmt::format("drop rate {:g} outside [0, 1)", r));
    for (double f : g.channel_fraction)
        if (!(f > 0.0 && f <= 1.0))
            throw InvalidArgument(fmt::format("channel fraction {:g} outside (0, 1]", f));
    for (double t : g.thresholds)
        if (!(t > 0.0 && t < 1.0))
            throw InvalidArgument(fmt::format("threshold {:g} outside (0, 1)", t));

    std::vector<std::optional<double>> thresholds;
    if (g.thresholds.empty())
        thresholds.push_back(std::nullopt);
    for (double t : g.thresholds)
        thresholds.emplace_back(t);

    std::vector<DesignPoint> out;
    for (auto kind : g.kinds) {
        std::vector<double> params;
        if (kind == DropoutKind::mcd)
            for (double r : g.mcd_drop_rates)
                params.push_back(1.0 - r);
        else
            params = g.masksembles_scales;
        for (double param : params)
            for (auto ne : g.n_exit)
                for (auto np : g.n_pass)
                    for (int bits : g.bitwidth)
                        for (double frac : g.channel_fraction)
                            for (auto eng : g.mapping_engines)
                                for (const auto& t : thresholds)
                                    out.push_back({kind, param, ne, np, bits, frac, eng, t});
    }
    return out;
}

std::string to_string(ChannelMode m)
{
    return m == ChannelMode::retrain ? "retrain" : "slice";
}

ChannelMode channel_mode_from_string(const std::string& text)
{
    if (text == "retrain")
        return ChannelMode::retrain;
    if (text == "slice")
        return ChannelMode::slice;
    throw ParseError("unknown channel mode '" + text + "'");
}

QFormat qformat_for_bitwidth(int bits)
{
    QFormat q;
    q.total_bits = bits;
    q.integer_bits = (bits + 1) / 2;
    q.validate();
    return q;
}

MultiExitSpec build_design(const DesignPoint& dp, const NetworkSpec& base_net, std::size_t dropout_depth,
                           std::size_t num_masks)
{
    const NetworkSpec net = dp.channel_fraction == 1.0 ? base_net : scale_channels(base_net, dp.channel_fraction);
    MultiExitSpec me = select_exits(place_exits(net), dp.n_exit);
    DropoutConfig cfg = dp.dropout_kind == DropoutKind::mcd
                            ? DropoutConfig::mcd(dp.dropout_param)
                            : DropoutConfig::masksembles(static_cast<int>(num_masks), dp.dropout_param);
    return insert_dropout(me, cfg, dropout_depth);
}

MetricsReport evaluate_network(const MultiExitSpec& me, const WeightStore& weights, const std::optional<QFormat>& q,
                               const Dataset& test, const NoiseSpec& noise, std::size_t n_pass, std::uint64_t seed,
                               std::optional<double> threshold, ExitMode exit_mode)
{
    if (test.size() == 0)
        throw InvalidArgument("evaluation dataset is empty");
    const BayesianRunner runner(me, weights, q);
    const FlopReport flops = count_flops(me);
    const std::uint64_t n_sample = me.n_exit() * n_pass;

    std::vector<ProbVector> probs;
    probs.reserve(test.size());
    double executed = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (threshold) {
            const ExitDecision d = runner.confidence_exit(test.inputs[i], *threshold, exit_mode, n_pass, seed + i);
            probs.push_back(d.probs);
            double cost = static_cast<double>(flops.flop_main);
            for (int k = 0; k < d.exit_taken; ++k)
                cost += static_cast<double>(n_pass) * static_cast<double>(flops.per_exit[k]);
            executed += cost;
        } else {
            probs.push_back(ensemble(runner.predict(test.inputs[i], n_pass, seed + i)));
        }
    }

    MetricsReport m;
    m.n_sample = n_sample;
    m.accuracy = accuracy(probs, test.labels);
    m.ece = expected_calibration_error(probs, test.labels);
    m.ape = average_predictive_entropy(runner, noise, n_pass, seed);
    const double baseline = static_cast<double>(cost_single_exit(flops, n_sample));
    m.flops_fraction = cost_multi_exit(flops, n_sample, me.n_exit()) / baseline;
    if (threshold)
        m.flops_fraction_early_exit = executed / static_cast<double>(test.size()) / baseline;
    m.validate();
    return m;
}

PointResult evaluate_design_point(const DesignPoint& dp, const EvalSettings& s, std::size_t index)
{
    PointResult r;
    r.point = dp;
    r.index = index;
    try {
        const MultiExitSpec me = build_design(dp, s.base_net, s.dropout_depth, s.num_masks);
        TrainHyperParams hp = s.training;
        hp.seed = s.seed;
        WeightStore weights;
        if (s.channel_mode == ChannelMode::slice && dp.channel_fraction != 1.0) {
            DesignPoint full = dp;
            full.channel_fraction = 1.0;
            const MultiExitSpec full_me = build_design(full, s.base_net, s.dropout_depth, s.num_masks);
            weights = slice_weights(train_toy(full_me, s.train, hp), me);
        } else {
            weights = train_toy(me, s.train, hp);
        }
        r.metrics = evaluate_network(me, weights, qformat_for_bitwidth(dp.bitwidth), s.test, s.noise, dp.n_pass,
                                     s.seed, dp.threshold, s.exit_mode);
        const MappingPlan plan = build_mapping(dp.n_sample(), dp.engines());
        r.latency = estimate_latency(plan, count_flops(me), s.hw);
        r.resources = estimate_resources(plan, me, s.hw);
        r.ok = true;
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    return r;
}

std::vector<PointResult> run_exploration(const std::vector<DesignPoint>& points, const EvalSettings& settings,
                                         std::size_t jobs)
{
    std::vector<PointResult> results(points.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < points.size(); i = next++)
            results[i] = evaluate_design_point(points[i], settings, i);
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(jobs, points.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& th : pool)
        th.join();
    return results;
}

bool Constraints::any_active() const noexcept
{
    return min_accuracy || max_ece || min_ape || max_flops_fraction || max_latency_ms || resource_budget;
}

bool Constraints::satisfied_by(const PointResult& r) const
{
    if (!r.ok)
        return false;
    const auto& m = r.metrics;
    if (min_accuracy && m.accuracy < *min_accuracy)
        return false;
    if (max_ece && m.ece > *max_ece)
        return false;
    if (min_ape && m.ape < *min_ape)
        return false;
    if (max_flops_fraction && m.flops_fraction > *max_flops_fraction)
        return false;
    if (max_latency_ms && r.latency.ms > *max_latency_ms)
        return false;
    if (resource_budget && !r.resources.used.fits_within(*resource_budget))
        return false;
    return true;
}

void from_json(const json& j, Constraints& c)
{
    c = Constraints{};
    for (const auto& [key, value] : j.items()) {
        if (value.is_null())
            continue;
        if (key == "min_accuracy")
            c.min_accuracy = value.get<double>();
        else if (key == "max_ece")
            c.max_ece = value.get<double>();
        else if (key == "min_ape")
            c.min_ape = value.get<double>();
        else if (key == "max_flops_fraction")
            c.max_flops_fraction = value.get<double>();
        else if (key == "max_latency_ms")
            c.max_latency_ms = value.get<double>();
        else if (key == "resource_budget")
            c.resource_budget = Resources{value.at("dsp").get<double>(), value.at("bram").get<double>(),
                                          value.at("lut").get<double>(), value.at("ff").get<double>()};
        else
            throw ParseError("unknown constraint '" + key + "'");
    }
    if (!c.any_active())
        throw InvalidArgument("constraints: at least one constraint must be active");
}

void to_json(json& j, const Constraints& c)
{
    j = json::object();
    if (c.min_accuracy)
        j["min_accuracy"] = *c.min_accuracy;
    if (c.max_ece)
        j["max_ece"] = *c.max_ece;
    if (c.min_ape)
        j["min_ape"] = *c.min_ape;
    if (c.max_flops_fraction)
        j["max_flops_fraction"] = *c.max_flops_fraction;
    if (c.max_latency_ms)
        j["max_latency_ms"] = *c.max_latency_ms;
    if (c.resource_budget)
        j["resource_budget"] = {{"dsp", c.resource_budget->dsp},
                                {"bram", c.resource_budget->bram},
                                {"lut", c.resource_budget->lut},
                                {"ff", c.resource_budget->ff}};
}

std::string to_string(Metric m)
{
    switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::ece: return "ece";
    case Metric::ape: return "ape";
    case Metric::flops: return "flops";
    case Metric::latency: return "latency";
    }
    return "?";
}

Metric metric_from_string(const std::string& text)
{
    for (auto m : {Metric::accuracy, Metric::ece, Metric::ape, Metric::flops, Metric::latency})
        if (to_string(m) == text)
            return m;
    throw ParseError("unknown metric '" + text + "'");
}

PriorityTerm default_priority_term(Metric m)
{
    switch (m) {
    case Metric::accuracy: return {m, true, 0.002};
    case Metric::ece: return {m, false, 0.001};
    case Metric::ape: return {m, true, 0.01};
    case Metric::flops: return {m, false, 0.0};
    case Metric::latency: return {m, false, 0.0};
    }
    return {m, true, 0.0};
}

void Priority::validate() const
{
    if (terms.empty())
        throw InvalidArgument("priority must name at least one metric");
    std::set<Metric> seen;
    for (const auto& t : terms) {
        if (!seen.insert(t.metric).second)
            throw InvalidArgument("priority repeats metric '" + to_string(t.metric) + "'");
        if (!(t.tolerance >= 0.0) || !std::isfinite(t.tolerance))
            throw InvalidArgument("priority tolerance must be finite and >= 0");
    }
}

Priority priority_of(std::initializer_list<Metric> metrics)
{
    Priority p;
    for (auto m : metrics)
        p.terms.push_back(default_priority_term(m));
    p.validate();
    return p;
}

void from_json(const json& j, Priority& p)
{
    p.terms.clear();
    for (const auto& item : j) {
        if (item.is_string()) {
            p.terms.push_back(default_priority_term(metric_from_string(item.get<std::string>())));
            continue;
        }
        PriorityTerm t = default_priority_term(metric_from_string(item.at("metric").get<std::string>()));
        for (const auto& [key, value] : item.items()) {
            if (key == "metric")
                continue;
            if (key == "direction") {
                const auto d = value.get<std::string>();
                if (d != "maximize" && d != "minimize")
                    throw ParseError("priority direction must be maximize or minimize");
                t.maximize = d == "maximize";
            } else if (key == "tolerance")
                t.tolerance = value.get<double>();
            else
                throw ParseError("unknown priority key '" + key + "'");
        }
        p.terms.push_back(t);
    }
    p.validate();
}

void to_json(json& j, const Priority& p)
{
    j = json::array();
    for (const auto& t : p.terms)
        j.push_back({{"metric", to_string(t.metric)},
                     {"direction", t.maximize ? "maximize" : "minimize"},
                     {"tolerance", t.tolerance}});
}

double metric_value(const PointResult& r, Metric m)
{
    switch (m) {
    case Metric::accuracy: return r.metrics.accuracy;
    case Metric::ece: return r.metrics.ece;
    case Metric::ape: return r.metrics.ape;
    case Metric::flops: return r.metrics.flops_fraction_early_exit.value_or(r.metrics.flops_fraction);
    case Metric::latency: return r.latency.ms;
    }
    return 0.0;
}

namespace {

// -1: a better, 1: b better, 0: tie
int compare_values(double a, double b, bool maximize)
{
    if (a == b)
        return 0;
    return (a > b) == maximize ? -1 : 1;
}

double bucket(double v, double tol)
{
    return tol > 0.0 ? std::floor(v / tol) : v;
}

}  // namespace

bool ranks_before(const PointResult& a, const PointResult& b, const Priority& priority)
{
    for (const auto& t : priority.terms) {
        const int c = compare_values(bucket(metric_value(a, t.metric), t.tolerance),
                                     bucket(metric_value(b, t.metric), t.tolerance), t.maximize);
        if (c != 0)
            return c < 0;
    }
    for (const auto& t : priority.terms) {
        const int c = compare_values(metric_value(a, t.metric), metric_value(b, t.metric), t.maximize);
        if (c != 0)
            return c < 0;
    }
    return a.index < b.index;
}

const PointResult& RankOutcome::best() const
{
    if (ranked.empty())
        throw InvalidArgument("no feasible design point");
    return ranked.front();
}

RankOutcome filter_and_rank(const std::vector<PointResult>& results, const Constraints& constraints,
                            const Priority& priority)
{
    if (results.empty())
        throw InvalidArgument("filter_and_rank: no results");
    priority.validate();
    RankOutcome out;
    for (const auto& r : results)
        if (constraints.satisfied_by(r))
            out.ranked.push_back(r);
    std::sort(out.ranked.begin(), out.ranked.end(),
              [&](const PointResult& a, const PointResult& b) { return ranks_before(a, b, priority); });
    return out;
}

OptSelections opt_selections(const std::vector<PointResult>& results, const Constraints& constraints)
{
    auto pick = [&](Metric m) -> std::optional<PointResult> {
        const RankOutcome r = filter_and_rank(results, constraints, priority_of({m}));
        if (r.empty())
            return std::nullopt;
        return r.best();
    };
    return {pick(Metric::accuracy), pick(Metric::ece), pick(Metric::ape)};
}

namespace {

std::optional<std::size_t> rank_of(const PointResult& r, const RankOutcome& ranking)
{
    for (std::size_t i = 0; i < ranking.ranked.size(); ++i)
        if (ranking.ranked[i].index == r.index)
            return i + 1;
    return std::nullopt;
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"')
            q += '"';
        q += c == '\n' ? ' ' : c;
    }
    return q + "\"";
}

}  // namespace

std::string ledger_csv_header()
{
    return "index,dropout_kind,dropout_param,n_exit,n_pass,n_sample,bitwidth,channel_fraction,engines,threshold,"
           "status,accuracy,ece,ape,flops_fraction,flops_fraction_early_exit,latency_cycles,latency_ms,dsp,bram,lut,"
           "ff,fits,feasible,rank,error";
}

std::string ledger_csv(const std::vector<PointResult>& results, const RankOutcome& ranking)
{
    std::string out = ledger_csv_header() + "\n";
    for (const auto& r : results) {
        const auto& p = r.point;
        const auto rank = rank_of(r, ranking);
        out += fmt::format("{},{},{:.6f},{},{},{},{},{:.6f},{},{},{}", r.index, to_string(p.dropout_kind),
                           p.dropout_param, p.n_exit, p.n_pass, p.n_sample(), p.bitwidth, p.channel_fraction,
                           p.engines(), p.threshold ? fmt::format("{:.6f}", *p.threshold) : "",
                           r.ok ? "ok" : "failed");
        if (r.ok) {
            const auto& m = r.metrics;
            const auto& u = r.resources.used;
            out += fmt::format(",{:.6f},{:.6f},{:.6f},{:.6f},{},{:.3f},{:.6f},{:.0f},{:.0f},{:.0f},{:.0f},{}",
                               m.accuracy, m.ece, m.ape, m.flops_fraction,
                               m.flops_fraction_early_exit ? fmt::format("{:.6f}", *m.flops_fraction_early_exit) : "",
                               r.latency.cycles, r.latency.ms, u.dsp, u.bram, u.lut, u.ff,
                               r.resources.fits ? "true" : "false");
        } else {
            out += ",,,,,,,,,,,,";
        }
        out += fmt::format(",{},{},{}\n", rank ? "true" : "false", rank ? std::to_string(*rank) : "",
                           csv_field(r.error));
    }
    return out;
}

json ledger_json(const std::vector<PointResult>& results, const RankOutcome& ranking)
{
    json rows = json::array();
    for (const auto& r : results) {
        json row = {{"index", r.index}, {"point", r.point}, {"status", r.ok ? "ok" : "failed"}};
        if (r.ok) {
            row["metrics"] = metrics_to_json(r.metrics);
            row["latency"] = {{"cycles", r.latency.cycles}, {"ms", r.latency.ms}};
            const auto& u = r.resources.used;
            row["resources"] = {{"dsp", u.dsp}, {"bram", u.bram}, {"lut", u.lut}, {"ff", u.ff},
                                {"fits", r.resources.fits}};
        } else {
            row["error"] = r.error;
        }
        const auto rank = rank_of(r, ranking);
        row["feasible"] = rank.has_value();
        row["rank"] = rank ? json(*rank) : json(nullptr);
        rows.push_back(std::move(row));
    }
    return {{"points", rows}, {"feasible_count", ranking.ranked.size()}};
}

namespace {

std::string resolve(const std::string& base_dir, const std::string& p)
{
    namespace fs = std::filesystem;
    const fs::path path(p);
    if (path.is_absolute() || base_dir.empty())
        return path.string();
    return (fs::path(base_dir) / path).string();
}

}  // namespace

ExploreConfig parse_explore_config(const json& j, const std::string& base_dir)
{
    if (!j.is_object())
        throw ParseError("exploration config must be an object");
    ExploreConfig c;
    bool have_constraints = false;
    for (const auto& [key, value] : j.items()) {
        if (key == "network")
            c.network_path = resolve(base_dir, value.get<std::string>());
        else if (key == "train")
            c.train_path = resolve(base_dir, value.get<std::string>());
        else if (key == "test")
            c.test_path = resolve(base_dir, value.get<std::string>());
        else if (key == "blobs") {
            for (const auto& [k2, v2] : value.items()) {
                if (k2 == "per_class")
                    c.blobs_per_class = v2.get<std::size_t>();
                else if (k2 == "classes")
                    c.blobs_classes = v2.get<std::size_t>();
                else if (k2 == "radius")
                    c.blobs_radius = v2.get<double>();
                else if (k2 == "spread")
                    c.blobs_spread = v2.get<double>();
                else if (k2 == "train_fraction")
                    c.train_fraction = v2.get<double>();
                else
                    throw ParseError("unknown blobs key '" + k2 + "'");
            }
        } else if (key == "hardware_model")
            c.hardware_model_path = resolve(base_dir, value.get<std::string>());
        else if (key == "seed")
            c.seed = value.get<std::uint64_t>();
        else if (key == "grids")
            c.grids = value.get<ExploreGrids>();
        else if (key == "constraints") {
            c.constraints = value.get<Constraints>();
            have_constraints = true;
        } else if (key == "priority")
            c.priority = value.get<Priority>();
        else if (key == "training") {
            for (const auto& [k2, v2] : value.items()) {
                if (k2 == "lr")
                    c.training.lr = v2.get<double>();
                else if (k2 == "epochs")
                    c.training.epochs = v2.get<int>();
                else if (k2 == "batch")
                    c.training.batch = v2.get<std::size_t>();
                else
                    throw ParseError("unknown training key '" + k2 + "'");
            }
        } else if (key == "noise_count")
            c.noise_count = value.get<std::size_t>();
        else if (key == "dropout_depth")
            c.dropout_depth = value.get<std::size_t>();
        else if (key == "num_masks")
            c.num_masks = value.get<std::size_t>();
        else if (key == "channel_mode")
            c.channel_mode = channel_mode_from_string(value.get<std::string>());
        else if (key == "exit_mode")
            c.exit_mode = exit_mode_from_string(value.get<std::string>());
        else
            throw ParseError("unknown exploration config key '" + key + "'");
    }
    if (c.network_path.empty())
        throw ParseError("exploration config needs 'network'");
    if (c.train_path.has_value() != c.test_path.has_value())
        throw ParseError("exploration config needs both 'train' and 'test' or neither");
    if (!have_constraints)
        throw ParseError("exploration config needs 'constraints'");
    if (c.priority.terms.empty())
        c.priority = priority_of({Metric::accuracy});
    return c;
}

ExploreConfig load_explore_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open exploration config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("malformed exploration config '" + path + "': " + e.what());
    }
    try {
        return parse_explore_config(j, std::filesystem::path(path).parent_path().string());
    } catch (const json::exception& e) {
        throw ParseError("exploration config '" + path + "': " + e.what());
    }
}

EvalSettings make_settings(const ExploreConfig& cfg, const std::optional<HardwareModel>& hw_override)
{
    EvalSettings s;
    s.base_net = load_network_file(cfg.network_path);
    if (cfg.train_path) {
        s.train = load_csv(*cfg.train_path);
        s.test = load_csv(*cfg.test_path);
    } else {
        auto [train, test] = train_test_split(
            make_blobs(cfg.blobs_per_class, cfg.blobs_classes, cfg.blobs_radius, cfg.blobs_spread, cfg.seed),
            cfg.train_fraction, cfg.seed);
        s.train = std::move(train);
        s.test = std::move(test);
    }
    s.noise = noise_like(s.train, cfg.noise_count, cfg.seed);
    if (hw_override)
        s.hw = *hw_override;
    else if (cfg.hardware_model_path)
        s.hw = load_hardware_model(*cfg.hardware_model_path);
    s.training = cfg.training;
    s.seed = cfg.seed;
    s.dropout_depth = cfg.dropout_depth;
    s.num_masks = cfg.num_masks;
    s.channel_mode = cfg.channel_mode;
    s.exit_mode = cfg.exit_mode;
    return s;
}

}  // namespace mebnn
