#include "mebnn/inference.hpp"

#include "mebnn/error.hpp"

#include <algorithm>

namespace mebnn {

const Tensor& CachedFeatures::at(const std::string& attach_after) const
{
    for (const auto& e : entries)
        if (e.attach_after == attach_after)
            return e.features;
    throw InvalidArgument("no cached features for attach point '" + attach_after + "'");
}

std::string to_string(ExitMode mode)
{
    return mode == ExitMode::per_exit ? "per_exit" : "ensemble_so_far";
}

ExitMode exit_mode_from_string(const std::string& text)
{
    if (text == "per_exit")
        return ExitMode::per_exit;
    if (text == "ensemble_so_far")
        return ExitMode::ensemble_so_far;
    throw ParseError("unknown exit mode '" + text + "' (expected per_exit or ensemble_so_far)");
}

nlohmann::json prediction_set_to_json(const PredictionSet& preds, std::uint64_t seed, const DropoutConfig* cfg)
{
    auto flat = nlohmann::json::array();
    for (const auto& exit_samples : preds.samples)
        for (const auto& p : exit_samples)
            for (double v : p)
                flat.push_back(v);
    return {{"n_exit", preds.n_exit},
            {"n_pass", preds.n_pass},
            {"class_count", preds.class_count},
            {"layout", "exit,pass,class"},
            {"seed", seed},
            {"dropout_hash", cfg ? cfg->hash() : std::string("none")},
            {"probs", std::move(flat)}};
}

std::map<std::string, MaskSet> build_mask_sets(const MultiExitSpec& me)
{
    std::map<std::string, MaskSet> sets;
    if (!me.dropout || me.dropout->kind != DropoutKind::masksembles)
        return sets;
    const auto n = static_cast<std::size_t>(me.dropout->num_masks);
    const double s = me.dropout->scale;
    const auto trunk_shapes = me.trunk.layer_output_shapes();
    Shape cur = me.trunk.input_shape;
    for (std::size_t i = 0; i < me.trunk.layers.size(); ++i) {
        if (me.trunk.layers[i].kind == LayerKind::dropout_point)
            sets.emplace(me.trunk.layers[i].id, generate_masks(dropout_unit_count(cur), n, s));
        cur = trunk_shapes[i];
    }
    for (std::size_t k = 0; k < me.exits.size(); ++k) {
        const long a = me.attach_index(k);
        Shape x = a < 0 ? me.trunk.input_shape : trunk_shapes[static_cast<std::size_t>(a)];
        for (const auto& l : me.exits[k].head_layers) {
            if (l.kind == LayerKind::dropout_point)
                sets.emplace(l.id, generate_masks(dropout_unit_count(x), n, s));
            x = infer_output_shape(l, x);
        }
    }
    return sets;
}

BayesianRunner::BayesianRunner(MultiExitSpec me, const WeightStore& weights, std::optional<QFormat> qformat)
    : me_(std::move(me))
    , qformat_(qformat)
{
    const auto diags = validate(me_);
    if (!diags.empty())
        throw InvalidArgument("invalid multi-exit network: " + diags.front().layer_id + ": " + diags.front().message);
    check_weights(weights, me_);
    if (qformat_) {
        qformat_->validate();
        weights_ = quantize_weights(weights, *qformat_);
    } else {
        weights_ = weights;
    }
    masks_ = build_mask_sets(me_);
    boundary_ = me_.bayes_boundary();
}

void BayesianRunner::check_pass_count(std::size_t n_pass) const
{
    if (n_pass < 1)
        throw InvalidArgument("n_pass must be >= 1");
    if (me_.dropout && me_.dropout->kind == DropoutKind::masksembles
        && n_pass > static_cast<std::size_t>(me_.dropout->num_masks))
        throw InvalidArgument("n_pass (" + std::to_string(n_pass) + ") exceeds the number of Masksembles masks ("
                              + std::to_string(me_.dropout->num_masks) + ")");
}

Tensor BayesianRunner::apply_layer(const LayerSpec& layer, const Tensor& x, std::size_t pass, std::uint64_t seed,
                                   ExecStats* stats) const
{
    if (layer.kind != LayerKind::dropout_point) {
        // weights are already quantized; only activations remain
        Tensor out = forward(layer, x, weights_, std::nullopt, stats);
        if (qformat_)
            quantize_inplace(out.data(), *qformat_);
        return out;
    }
    if (stats)
        ++stats->layers;
    if (!me_.dropout)
        return x;
    Tensor out;
    if (me_.dropout->kind == DropoutKind::mcd) {
        const RngStream rng(seed, pass, layer.id);
        out = mcd_forward(x, me_.dropout->keep_rate, me_.dropout->granularity, rng, me_.dropout->inverted);
    } else {
        out = masksembles_forward(x, pass, masks_.at(layer.id));
    }
    if (qformat_)
        quantize_inplace(out.data(), *qformat_);
    return out;
}

ProbVector BayesianRunner::finish_head(const std::vector<LayerSpec>& head, Tensor x, std::size_t pass,
                                       std::uint64_t seed, ExecStats* stats) const
{
    // the terminal softmax is evaluated in double precision and not quantized
    const std::size_t body = head.size() - 1;
    for (std::size_t i = 0; i < body; ++i)
        x = apply_layer(head[i], x, pass, seed, stats);
    if (stats)
        ++stats->layers;
    return softmax(x.data());
}

CachedFeatures BayesianRunner::run_trunk(const Tensor& input, ExecStats* stats) const
{
    if (input.shape() != me_.trunk.input_shape)
        throw ShapeError("input shape " + shape_to_string(input.shape()) + " does not match network input "
                         + shape_to_string(me_.trunk.input_shape));
    std::vector<std::size_t> stops(me_.exits.size());
    std::size_t last = 0;
    for (std::size_t k = 0; k < me_.exits.size(); ++k) {
        stops[k] = std::min(static_cast<std::size_t>(me_.attach_index(k) + 1), boundary_);
        last = std::max(last, stops[k]);
    }

    CachedFeatures cached;
    cached.entries.resize(me_.exits.size());
    Tensor x = input;
    std::size_t k = 0;
    auto capture = [&](std::size_t done) {
        while (k < stops.size() && stops[k] == done) {
            cached.entries[k] = {me_.exits[k].attach_after, done, x};
            ++k;
        }
    };
    capture(0);
    for (std::size_t i = 0; i < last; ++i) {
        x = apply_layer(me_.trunk.layers[i], x, 0, 0, stats);
        capture(i + 1);
    }
    return cached;
}

ProbVector BayesianRunner::run_exit_pass(const CachedFeatures& cached, std::size_t exit_pos, std::size_t pass,
                                         std::uint64_t seed, ExecStats* stats) const
{
    const auto& entry = cached.entries.at(exit_pos);
    Tensor x = entry.features;
    const auto attach_end = static_cast<std::size_t>(me_.attach_index(exit_pos) + 1);
    for (std::size_t i = entry.resume_at; i < attach_end; ++i)
        x = apply_layer(me_.trunk.layers[i], x, pass, seed, stats);
    return finish_head(me_.exits[exit_pos].head_layers, std::move(x), pass, seed, stats);
}

std::vector<ProbVector> BayesianRunner::run_exit_samples(const CachedFeatures& cached, std::size_t exit_pos,
                                                         std::size_t n_pass, std::uint64_t seed,
                                                         ExecStats* stats) const
{
    check_pass_count(n_pass);
    std::vector<ProbVector> out;
    out.reserve(n_pass);
    for (std::size_t p = 0; p < n_pass; ++p)
        out.push_back(run_exit_pass(cached, exit_pos, p, seed, stats));
    return out;
}

PredictionSet BayesianRunner::predict(const Tensor& input, std::size_t n_pass, std::uint64_t seed,
                                      ExecStats* stats) const
{
    check_pass_count(n_pass);
    const CachedFeatures cached = run_trunk(input, stats);
    PredictionSet preds;
    preds.n_exit = me_.exits.size();
    preds.n_pass = n_pass;
    preds.class_count = me_.class_count();
    for (std::size_t k = 0; k < me_.exits.size(); ++k)
        preds.samples.push_back(run_exit_samples(cached, k, n_pass, seed, stats));
    return preds;
}

ExitDecision BayesianRunner::confidence_exit(const Tensor& input, double threshold, ExitMode mode,
                                             std::size_t n_pass, std::uint64_t seed, ExecStats* stats) const
{
    if (!(threshold > 0.0 && threshold < 1.0))
        throw InvalidArgument("confidence threshold must lie in (0, 1)");
    check_pass_count(n_pass);
    if (input.shape() != me_.trunk.input_shape)
        throw ShapeError("input shape " + shape_to_string(input.shape()) + " does not match network input "
                         + shape_to_string(me_.trunk.input_shape));

    // the deterministic trunk is advanced lazily so that an early exit does
    // not pay for deeper layers
    Tensor x = input;
    std::size_t done = 0;
    PredictionSet so_far;
    so_far.n_pass = n_pass;
    so_far.class_count = me_.class_count();

    ExitDecision decision;
    decision.mode = mode;
    for (std::size_t k = 0; k < me_.exits.size(); ++k) {
        const std::size_t stop = std::min(static_cast<std::size_t>(me_.attach_index(k) + 1), boundary_);
        for (; done < stop; ++done)
            x = apply_layer(me_.trunk.layers[done], x, 0, 0, stats);

        CachedFeatures view;
        view.entries.resize(me_.exits.size());
        view.entries[k] = {me_.exits[k].attach_after, stop, x};
        so_far.samples.push_back(run_exit_samples(view, k, n_pass, seed, stats));
        so_far.n_exit = k + 1;

        decision.probs = mode == ExitMode::per_exit ? exit_mean(so_far, k + 1) : ensemble(so_far);
        decision.exit_taken = static_cast<int>(k + 1);
        decision.confidence = *std::max_element(decision.probs.begin(), decision.probs.end());
        if (decision.confidence >= threshold)
            break;
    }
    return decision;
}

ProbVector BayesianRunner::run_uncached_sample(const Tensor& input, std::size_t exit_pos, std::size_t pass,
                                               std::uint64_t seed) const
{
    Tensor x = input;
    const auto attach_end = static_cast<std::size_t>(me_.attach_index(exit_pos) + 1);
    for (std::size_t i = 0; i < attach_end; ++i)
        x = apply_layer(me_.trunk.layers[i], x, pass, seed, nullptr);
    return finish_head(me_.exits[exit_pos].head_layers, std::move(x), pass, seed, nullptr);
}

CachedFeatures run_trunk(const MultiExitSpec& me, const Tensor& input, const WeightStore& weights,
                         const std::optional<QFormat>& qformat)
{
    return BayesianRunner(me, weights, qformat).run_trunk(input);
}

std::vector<ProbVector> run_exit_samples(const CachedFeatures& cached, const MultiExitSpec& me, int exit_index,
                                         std::size_t n_pass, const WeightStore& weights, std::uint64_t seed)
{
    if (exit_index < 1 || static_cast<std::size_t>(exit_index) > me.exits.size())
        throw InvalidArgument("exit_index " + std::to_string(exit_index) + " out of range");
    return BayesianRunner(me, weights).run_exit_samples(cached, static_cast<std::size_t>(exit_index - 1), n_pass, seed);
}

PredictionSet predict(const MultiExitSpec& me, const Tensor& input, std::size_t n_pass, const WeightStore& weights,
                      std::uint64_t seed, const std::optional<QFormat>& qformat)
{
    return BayesianRunner(me, weights, qformat).predict(input, n_pass, seed);
}

ExitDecision confidence_exit(const MultiExitSpec& me, const Tensor& input, double threshold, ExitMode mode,
                             const WeightStore& weights, std::size_t n_pass, std::uint64_t seed)
{
    return BayesianRunner(me, weights).confidence_exit(input, threshold, mode, n_pass, seed);
}

ProbVector ensemble(const PredictionSet& preds, std::optional<std::size_t> upto_exit)
{
    const std::size_t upto = upto_exit.value_or(preds.samples.size());
    if (upto > preds.samples.size())
        throw InvalidArgument("ensemble: upto_exit " + std::to_string(upto) + " exceeds n_exit "
                              + std::to_string(preds.samples.size()));
    ProbVector mean;
    std::size_t count = 0;
    for (std::size_t k = 0; k < upto; ++k) {
        for (const auto& p : preds.samples[k]) {
            if (mean.empty())
                mean.assign(p.size(), 0.0);
            if (p.size() != mean.size())
                throw ShapeError("ensemble: probability vectors differ in length");
            for (std::size_t c = 0; c < p.size(); ++c)
                mean[c] += p[c];
            ++count;
        }
    }
    if (count == 0)
        throw InvalidArgument("ensemble: empty selection");
    for (auto& v : mean)
        v /= static_cast<double>(count);
    return mean;
}

ProbVector exit_mean(const PredictionSet& preds, std::size_t exit_index)
{
    if (exit_index < 1 || exit_index > preds.samples.size())
        throw InvalidArgument("exit_mean: exit_index out of range");
    PredictionSet one;
    one.samples.push_back(preds.samples[exit_index - 1]);
    return ensemble(one);
}

}  // namespace mebnn
