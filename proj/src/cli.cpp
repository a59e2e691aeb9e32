#include "mebnn/cli.hpp"

#include "mebnn/dataset.hpp"
#include "mebnn/emitter.hpp"
#include "mebnn/error.hpp"
#include "mebnn/explorer.hpp"
#include "mebnn/inference.hpp"
#include "mebnn/mapping.hpp"
#include "mebnn/metrics.hpp"
#include "mebnn/netspec.hpp"
#include "mebnn/trainer.hpp"
#include "mebnn/weights.hpp"

#include "CLI11.hpp"
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

namespace mebnn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for results the user asked for but that do not exist.
struct Infeasible : Error {
    using Error::Error;
};

void write_file(const fs::path& path, const std::string& content)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot write '" + path.string() + "'");
    f << content;
}

std::string read_file(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(f), {}};
}

json read_json(const std::string& path)
{
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParseError("malformed '" + path + "': " + e.what());
    }
}

std::map<std::string, MaskSet> load_masks(const MultiExitSpec& me, const std::string& spec_path)
{
    const fs::path p = fs::path(spec_path).parent_path() / me.masks_file;
    try {
        return read_json(p.string()).get<std::map<std::string, MaskSet>>();
    } catch (const json::exception& e) {
        throw ParseError("malformed mask file '" + p.string() + "': " + e.what());
    }
}

HardwareModel resolve_hw(const std::string& flag, const std::optional<std::string>& config_path = std::nullopt)
{
    if (!flag.empty())
        return load_hardware_model(flag);
    if (config_path)
        return load_hardware_model(*config_path);
    if (const char* env = std::getenv(hw_model_env); env && *env)
        return load_hardware_model(env);
    return HardwareModel{};
}

std::string flop_summary(const FlopReport& r)
{
    std::string s = fmt::format("flop_main={} flop_exit_total={} alpha={:.6f} per_exit=[", r.flop_main,
                                r.flop_exit_total, r.alpha);
    for (std::size_t i = 0; i < r.per_exit.size(); ++i)
        s += (i ? "," : "") + std::to_string(r.per_exit[i]);
    return s + "]";
}

json flop_json(const FlopReport& r)
{
    return {{"flop_main", r.flop_main}, {"flop_exit_total", r.flop_exit_total}, {"per_exit", r.per_exit},
            {"alpha", r.alpha}};
}

json option_json(const MappingOption& o)
{
    const auto& u = o.resources.used;
    return {{"plan", o.plan},
            {"latency", {{"cycles", o.latency.cycles}, {"ms", o.latency.ms}}},
            {"resources", {{"dsp", u.dsp}, {"bram", u.bram}, {"lut", u.lut}, {"ff", u.ff}}},
            {"fits", o.resources.fits}};
}

struct TransformOpts {
    std::string net;
    std::string exits = "auto";
    std::string dropout = "none";
    double keep_rate = 0.75;
    std::string granularity = "element";
    bool inverted = false;
    int num_masks = 4;
    double scale = 1.0;
    std::size_t depth = 1;
    double channels = 1.0;
    std::uint64_t seed = 0;
    std::string name = "model";
};

void cmd_transform(const TransformOpts& o, const fs::path& out_dir, std::ostream& out)
{
    NetworkSpec net = load_network_file(o.net);
    if (o.channels != 1.0)
        net = scale_channels(net, o.channels);
    MultiExitSpec me = place_exits(net);
    if (o.exits != "auto") {
        std::size_t n = 0;
        try {
            n = std::stoul(o.exits);
        } catch (const std::exception&) {
            throw InvalidArgument("--exits must be 'auto' or a positive integer");
        }
        me = select_exits(me, n);
    }
    std::map<std::string, MaskSet> masks;
    if (o.dropout != "none") {
        DropoutConfig cfg;
        if (o.dropout == "mcd") {
            cfg = DropoutConfig::mcd(o.keep_rate, granularity_from_string(o.granularity), o.seed);
            cfg.inverted = o.inverted;
        } else if (o.dropout == "masksembles") {
            cfg = DropoutConfig::masksembles(o.num_masks, o.scale);
        } else {
            throw InvalidArgument("--dropout must be none, mcd or masksembles");
        }
        me = insert_dropout(me, cfg, o.depth);
        if (cfg.kind == DropoutKind::masksembles) {
            masks = build_mask_sets(me);
            me.masks_file = o.name + ".masks.json";
        }
    }
    if (const auto d = validate(me); !d.empty())
        throw InvalidArgument("transformed network invalid at '" + d.front().layer_id + "': " + d.front().message);

    write_file(out_dir / (o.name + ".mebnn.json"), serialize_multi_exit(me));
    if (!masks.empty())
        write_file(out_dir / me.masks_file, json(masks).dump(2) + "\n");

    out << "n_exit " << me.n_exit() << "\n";
    out << "dropout_sites " << me.dropout_sites.size() << "\n";
    for (const auto& s : me.dropout_sites)
        out << "  " << s.layer_id << " exit" << s.exit_index << " " << (s.segment == Segment::trunk ? "trunk" : "head")
            << "\n";
    out << flop_summary(count_flops(me)) << "\n";
    out << "wrote " << (out_dir / (o.name + ".mebnn.json")).string() << "\n";
}

struct TrainOpts {
    std::string spec;
    std::string data;
    TrainHyperParams hp;
    std::string name = "model";
};

void cmd_train(const TrainOpts& o, const fs::path& out_dir, std::ostream& out)
{
    const MultiExitSpec me = load_multi_exit_file(o.spec);
    const Dataset data = load_csv(o.data);
    const WeightStore w = train_toy(me, data, o.hp);
    fs::create_directories(out_dir);
    const fs::path manifest = out_dir / (o.name + ".weights.json");
    save_weights(w, manifest.string());
    out << "wrote " << manifest.string() << "\n";
}

struct EvaluateOpts {
    std::string spec;
    std::string weights;
    std::string data;
    std::string noise_from;
    std::size_t n_pass = 1;
    std::uint64_t seed = 0;
    int bits = 0;
    double threshold = 0.0;
    std::string exit_mode = "per_exit";
    std::size_t noise_count = 100;
};

void cmd_evaluate(const EvaluateOpts& o, const fs::path& out_dir, std::ostream& out)
{
    const MultiExitSpec me = load_multi_exit_file(o.spec);
    const WeightStore w = load_weights(o.weights);
    const Dataset data = load_csv(o.data);
    const Dataset noise_src = o.noise_from.empty() ? data : load_csv(o.noise_from);
    const NoiseSpec noise = noise_like(noise_src, o.noise_count, o.seed);
    std::optional<QFormat> q;
    if (o.bits)
        q = qformat_for_bitwidth(o.bits);
    std::optional<double> t;
    if (o.threshold > 0.0)
        t = o.threshold;
    const MetricsReport m =
        evaluate_network(me, w, q, data, noise, o.n_pass, o.seed, t, exit_mode_from_string(o.exit_mode));
    write_file(out_dir / "metrics.json", metrics_to_json(m).dump(2) + "\n");
    write_file(out_dir / "metrics.csv", metrics_csv_header() + "\n" + metrics_csv_row(m) + "\n");
    out << metrics_csv_header() << "\n" << metrics_csv_row(m) << "\n";
}

struct ExploreOpts {
    std::string config;
    std::string hw;
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
};

void cmd_explore(const ExploreOpts& o, const fs::path& out_dir, std::ostream& out)
{
    ExploreConfig cfg = load_explore_config(o.config);
    if (o.seed)
        cfg.seed = *o.seed;
    const HardwareModel hw = resolve_hw(o.hw, cfg.hardware_model_path);
    const EvalSettings settings = make_settings(cfg, hw);
    const auto points = enumerate_design_points(cfg.grids);
    const auto results = run_exploration(points, settings, o.jobs);
    const RankOutcome ranking = filter_and_rank(results, cfg.constraints, cfg.priority);
    const OptSelections opt = opt_selections(results, cfg.constraints);

    write_file(out_dir / "ledger.csv", ledger_csv(results, ranking));
    write_file(out_dir / "ledger.json", ledger_json(results, ranking).dump(2) + "\n");
    auto opt_json = [](const std::optional<PointResult>& r) {
        return r ? json{{"index", r->index}, {"point", r->point}, {"metrics", metrics_to_json(r->metrics)}}
                 : json(nullptr);
    };
    write_file(out_dir / "opt.json",
               json{{"acc_opt", opt_json(opt.acc_opt)}, {"ece_opt", opt_json(opt.ece_opt)},
                    {"ape_opt", opt_json(opt.ape_opt)}}
                       .dump(2)
                   + "\n");

    std::size_t failed = 0;
    for (const auto& r : results)
        failed += r.ok ? 0 : 1;
    out << fmt::format("points {} failed {} feasible {}\n", results.size(), failed, ranking.ranked.size());
    if (ranking.empty())
        throw Infeasible("no feasible point satisfies the constraints");

    const PointResult& best = ranking.best();
    const MultiExitSpec me = build_design(best.point, settings.base_net, settings.dropout_depth, settings.num_masks);
    const MappingPlan plan = build_mapping(best.point.n_sample(), best.point.engines());
    const AcceleratorPlan ap =
        emit_plan(best.point, plan, me, nullptr, make_estimates(plan, me, hw, best.metrics), hw.strategy);
    write_file(out_dir / "best.plan.json", serialize_plan(ap));
    write_file(out_dir / "best.plan.txt", render_report(ap));
    out << "best " << best.point.label() << "\n";
    if (opt.acc_opt)
        out << "acc_opt " << opt.acc_opt->point.label() << "\n";
    if (opt.ece_opt)
        out << "ece_opt " << opt.ece_opt->point.label() << "\n";
    if (opt.ape_opt)
        out << "ape_opt " << opt.ape_opt->point.label() << "\n";
}

struct MapOpts {
    std::string spec;
    std::string hw;
    std::size_t n_pass = 1;
    std::size_t engines = 0;
};

void cmd_map(const MapOpts& o, const fs::path& out_dir, std::ostream& out)
{
    const MultiExitSpec me = load_multi_exit_file(o.spec);
    const HardwareModel hw = resolve_hw(o.hw);
    const FlopReport flops = count_flops(me);
    const std::size_t n_sample = o.n_pass * me.n_exit();
    if (n_sample == 0)
        throw InvalidArgument("--n-pass must be >= 1");
    std::vector<MappingOption> options;
    if (o.engines) {
        MappingOption opt;
        opt.plan = build_mapping(n_sample, o.engines);
        opt.latency = estimate_latency(opt.plan, flops, hw);
        opt.resources = estimate_resources(opt.plan, me, hw);
        options.push_back(opt);
    } else {
        options = pareto_mappings(n_sample, flops, hw, &me);
    }
    json opts = json::array();
    for (const auto& opt : options)
        opts.push_back(option_json(opt));
    write_file(out_dir / "mapping.json",
               json{{"n_sample", n_sample}, {"flops", flop_json(flops)}, {"options", opts}}.dump(2) + "\n");
    out << "engines strategy  rounds      cycles        ms  fits\n";
    for (const auto& opt : options)
        out << fmt::format("{:>7} {:<9} {:>6} {:>11.1f} {:>9.6f}  {}\n", opt.plan.n_engines,
                           to_string(opt.plan.strategy), opt.plan.rounds, opt.latency.cycles, opt.latency.ms,
                           opt.resources.fits ? "yes" : "no");
}

struct EmitOpts {
    std::string spec;
    std::string hw;
    std::string metrics;
    std::size_t n_pass = 1;
    std::size_t engines = 0;
    int bits = 16;
    std::string name = "accelerator";
};

void cmd_emit(const EmitOpts& o, const fs::path& out_dir, std::ostream& out)
{
    const MultiExitSpec me = load_multi_exit_file(o.spec);
    const HardwareModel hw = resolve_hw(o.hw);
    std::map<std::string, MaskSet> masks;
    const bool have_masks = !me.masks_file.empty();
    if (have_masks)
        masks = load_masks(me, o.spec);
    std::optional<MetricsReport> metrics;
    if (!o.metrics.empty())
        metrics = metrics_from_json(read_json(o.metrics));
    const DesignPoint dp = design_point_for(me, o.n_pass, o.bits, o.engines);
    const MappingPlan plan = build_mapping(dp.n_sample(), dp.engines());
    const AcceleratorPlan ap = emit_plan(dp, plan, me, have_masks ? &masks : nullptr,
                                         make_estimates(plan, me, hw, metrics), hw.strategy);
    write_file(out_dir / (o.name + ".plan.json"), serialize_plan(ap));
    const std::string report = render_report(ap);
    write_file(out_dir / (o.name + ".plan.txt"), report);
    out << report;
}

struct GenDataOpts {
    std::size_t per_class = 100;
    std::size_t classes = 3;
    double radius = 3.0;
    double spread = 1.0;
    double train_fraction = 0.7;
    std::uint64_t seed = 0;
};

void cmd_gen_data(const GenDataOpts& o, const fs::path& out_dir, std::ostream& out)
{
    const auto [train, test] =
        train_test_split(make_blobs(o.per_class, o.classes, o.radius, o.spread, o.seed), o.train_fraction, o.seed);
    fs::create_directories(out_dir);
    save_csv(train, (out_dir / "train.csv").string());
    save_csv(test, (out_dir / "test.csv").string());
    out << "train " << train.size() << " test " << test.size() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Multi-exit Bayesian neural network accelerator design flow"};
    app.name("mebnn");
    app.require_subcommand(1);
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    auto* transform = app.add_subcommand("transform", "add exits and dropout to a network");
    TransformOpts topts;
    transform->add_option("--net", topts.net, "network spec")->required();
    transform->add_option("--exits", topts.exits, "'auto' or number of exits to keep");
    transform->add_option("--dropout", topts.dropout, "none, mcd or masksembles");
    transform->add_option("--keep-rate", topts.keep_rate);
    transform->add_option("--granularity", topts.granularity, "element or channel");
    transform->add_flag("--inverted", topts.inverted, "divide survivors by keep_rate");
    transform->add_option("--num-masks", topts.num_masks);
    transform->add_option("--scale", topts.scale);
    transform->add_option("--depth", topts.depth, "learnable layers per exit that get dropout");
    transform->add_option("--channels", topts.channels, "channel fraction");
    transform->add_option("--name", topts.name);

    auto* train = app.add_subcommand("train", "train a multi-exit network on a CSV dataset");
    TrainOpts tropts;
    train->add_option("--spec", tropts.spec)->required();
    train->add_option("--data", tropts.data)->required();
    train->add_option("--epochs", tropts.hp.epochs);
    train->add_option("--lr", tropts.hp.lr);
    train->add_option("--batch", tropts.hp.batch);
    train->add_option("--name", tropts.name);

    auto* evaluate = app.add_subcommand("evaluate", "accuracy, ECE, aPE and FLOPs of a network");
    EvaluateOpts eopts;
    evaluate->add_option("--spec", eopts.spec)->required();
    evaluate->add_option("--weights", eopts.weights)->required();
    evaluate->add_option("--data", eopts.data)->required();
    evaluate->add_option("--noise-from", eopts.noise_from, "CSV whose statistics shape the noise set");
    evaluate->add_option("--noise-count", eopts.noise_count);
    evaluate->add_option("--n-pass", eopts.n_pass);
    evaluate->add_option("--bits", eopts.bits, "fixed-point bitwidth (default: float)");
    evaluate->add_option("--threshold", eopts.threshold, "confidence threshold for early exiting");
    evaluate->add_option("--exit-mode", eopts.exit_mode, "per_exit or ensemble_so_far");

    auto* explore = app.add_subcommand("explore", "grid search over design points");
    ExploreOpts xopts;
    std::uint64_t explore_seed = 0;
    explore->add_option("--config", xopts.config)->required();
    explore->add_option("--hw", xopts.hw, "hardware model file");

    auto* map = app.add_subcommand("map", "spatial/temporal mapping of MC samples");
    MapOpts mopts;
    map->add_option("--spec", mopts.spec)->required();
    map->add_option("--hw", mopts.hw);
    map->add_option("--n-pass", mopts.n_pass);
    map->add_option("--engines", mopts.engines, "fixed engine count (default: Pareto sweep)");

    auto* emit = app.add_subcommand("emit", "write the accelerator plan");
    EmitOpts emopts;
    emit->add_option("--spec", emopts.spec)->required();
    emit->add_option("--hw", emopts.hw);
    emit->add_option("--metrics", emopts.metrics, "metrics.json from evaluate");
    emit->add_option("--n-pass", emopts.n_pass);
    emit->add_option("--engines", emopts.engines, "engine count (default: one per sample)");
    emit->add_option("--bits", emopts.bits);
    emit->add_option("--name", emopts.name);

    auto* gen = app.add_subcommand("gen-data", "synthetic 2-D Gaussian blob dataset");
    GenDataOpts gopts;
    gen->add_option("--per-class", gopts.per_class);
    gen->add_option("--classes", gopts.classes);
    gen->add_option("--radius", gopts.radius);
    gen->add_option("--spread", gopts.spread);
    gen->add_option("--train-fraction", gopts.train_fraction);

    for (auto* sub : {transform, train, evaluate, explore, map, emit, gen}) {
        sub->add_option("--out", out_dir, "output directory");
        if (sub == explore)
            sub->add_option("--seed", explore_seed, "overrides the config seed");
        else
            sub->add_option("--seed", seed);
        if (sub == explore)
            sub->add_option("--jobs", jobs, "parallel point evaluations");
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return exit_usage;
    }

    try {
        const fs::path dir(out_dir);
        if (*transform) {
            topts.seed = seed;
            cmd_transform(topts, dir, out);
        } else if (*train) {
            tropts.hp.seed = seed;
            cmd_train(tropts, dir, out);
        } else if (*evaluate) {
            eopts.seed = seed;
            cmd_evaluate(eopts, dir, out);
        } else if (*explore) {
            if (explore->count("--seed"))
                xopts.seed = explore_seed;
            xopts.jobs = jobs;
            cmd_explore(xopts, dir, out);
        } else if (*map) {
            cmd_map(mopts, dir, out);
        } else if (*emit) {
            cmd_emit(emopts, dir, out);
        } else if (*gen) {
            gopts.seed = seed;
            cmd_gen_data(gopts, dir, out);
        }
    } catch (const Infeasible& e) {
        err << "error: " << e.what() << "\n";
        return exit_infeasible;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return exit_internal;
    }
    return exit_ok;
}

}  // namespace mebnn
