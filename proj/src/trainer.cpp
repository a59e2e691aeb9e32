#include "mebnn/trainer.hpp"

#include "mebnn/error.hpp"
#include "mebnn/layers.hpp"
#include "mebnn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mebnn {

namespace {

// Per-layer record kept during the forward pass for backprop.
struct Trace {
    std::vector<double> input;
    std::vector<double> mask;         // dropout multipliers
    std::vector<std::size_t> argmax;  // max-pool winners
};

void require_trainable(const LayerSpec& l, bool terminal)
{
    switch (l.kind) {
    case LayerKind::dense:
    case LayerKind::relu:
    case LayerKind::max_pool:
    case LayerKind::avg_pool:
    case LayerKind::flatten:
    case LayerKind::dropout_point:
        return;
    case LayerKind::softmax:
        if (terminal)
            return;
        throw InvalidArgument("train_toy: softmax layer '" + l.id + "' is only supported as a head's last layer");
    case LayerKind::conv2d:
        break;
    }
    throw InvalidArgument("train_toy: unsupported layer kind for training: " + to_string(l.kind) + " ('" + l.id + "')");
}

}  // namespace

ToyTrainer::ToyTrainer(const MultiExitSpec& me, const WeightStore& init)
    : me_(me)
{
    if (me_.trunk.input_shape.size() != 1)
        throw InvalidArgument("train_toy: only flat (feature-vector) inputs are supported");
    for (const auto& l : me_.trunk.layers)
        require_trainable(l, false);
    for (const auto& e : me_.exits) {
        if (e.head_layers.empty() || e.head_layers.back().kind != LayerKind::softmax)
            throw InvalidArgument("train_toy: every exit head must end in softmax");
        for (std::size_t i = 0; i < e.head_layers.size(); ++i)
            require_trainable(e.head_layers[i], i + 1 == e.head_layers.size());
    }
    check_weights(init, me_);

    for (const auto& ref : me_.all_layers()) {
        const auto& l = *ref.layer;
        if (!is_learnable(l.kind))
            continue;
        ParamSlot slot;
        slot.weight_offset = params_.size();
        for (float v : init.get(l.id, "weight").data())
            params_.push_back(v);
        slot.bias_offset = params_.size();
        for (float v : init.get(l.id, "bias").data())
            params_.push_back(v);
        slots_[l.id] = slot;
    }

    if (me_.dropout && me_.dropout->kind == DropoutKind::masksembles) {
        const auto n = static_cast<std::size_t>(me_.dropout->num_masks);
        Shape cur = me_.trunk.input_shape;
        std::vector<Shape> trunk_out;
        for (const auto& l : me_.trunk.layers) {
            if (l.kind == LayerKind::dropout_point)
                masks_[l.id] = generate_masks(dropout_unit_count(cur), n, me_.dropout->scale);
            cur = infer_output_shape(l, cur);
            trunk_out.push_back(cur);
        }
        for (std::size_t k = 0; k < me_.exits.size(); ++k) {
            const long a = me_.attach_index(k);
            Shape s = a < 0 ? me_.trunk.input_shape : trunk_out[static_cast<std::size_t>(a)];
            for (const auto& l : me_.exits[k].head_layers) {
                if (l.kind == LayerKind::dropout_point)
                    masks_[l.id] = generate_masks(dropout_unit_count(s), n, me_.dropout->scale);
                s = infer_output_shape(l, s);
            }
        }
    }
}

double ToyTrainer::sample_pass(const Tensor& x, int label, std::uint64_t dropout_seed, std::uint64_t sample,
                               std::vector<double>* grad) const
{
    const auto forward_layer = [&](const LayerSpec& l, std::vector<double> in, Trace& tr) {
        tr.input = in;
        switch (l.kind) {
        case LayerKind::dense: {
            const auto& p = l.dense();
            const auto& slot = slots_.at(l.id);
            std::vector<double> out(p.out_features);
            for (std::size_t o = 0; o < p.out_features; ++o) {
                double acc = params_[slot.bias_offset + o];
                const double* row = &params_[slot.weight_offset + o * p.in_features];
                for (std::size_t i = 0; i < p.in_features; ++i)
                    acc += row[i] * in[i];
                out[o] = acc;
            }
            return out;
        }
        case LayerKind::relu:
            for (auto& v : in)
                v = std::max(v, 0.0);
            return in;
        case LayerKind::max_pool:
        case LayerKind::avg_pool: {
            const auto& p = l.pool();
            const std::size_t n_out = (in.size() - p.window) / p.stride + 1;
            std::vector<double> out(n_out);
            tr.argmax.assign(n_out, 0);
            for (std::size_t o = 0; o < n_out; ++o) {
                const std::size_t start = o * p.stride;
                if (l.kind == LayerKind::max_pool) {
                    std::size_t best = start;
                    for (std::size_t k = start + 1; k < start + p.window; ++k)
                        if (in[k] > in[best])
                            best = k;
                    out[o] = in[best];
                    tr.argmax[o] = best;
                } else {
                    double acc = 0.0;
                    for (std::size_t k = start; k < start + p.window; ++k)
                        acc += in[k];
                    out[o] = acc / static_cast<double>(p.window);
                }
            }
            return out;
        }
        case LayerKind::dropout_point: {
            tr.mask.assign(in.size(), 1.0);
            if (me_.dropout && me_.dropout->kind == DropoutKind::mcd) {
                const auto& cfg = *me_.dropout;
                const RngStream rng(dropout_seed, sample, l.id);
                const double scale = cfg.inverted ? 1.0 / cfg.keep_rate : cfg.keep_rate;
                for (std::size_t i = 0; i < in.size(); ++i)
                    tr.mask[i] = rng.uniform_at(i) > cfg.keep_rate ? 0.0 : scale;
            } else if (me_.dropout) {
                const auto& set = masks_.at(l.id);
                const auto& m = set.masks[sample % set.num_masks()];
                for (std::size_t i = 0; i < in.size(); ++i)
                    tr.mask[i] = m[i];
            }
            for (std::size_t i = 0; i < in.size(); ++i)
                in[i] *= tr.mask[i];
            return in;
        }
        case LayerKind::flatten:
            return in;
        default:
            throw InvalidArgument("train_toy: unexpected layer '" + l.id + "'");
        }
    };

    const auto backward_layer = [&](const LayerSpec& l, const Trace& tr, const std::vector<double>& dy) {
        switch (l.kind) {
        case LayerKind::dense: {
            const auto& p = l.dense();
            const auto& slot = slots_.at(l.id);
            std::vector<double> dx(p.in_features, 0.0);
            for (std::size_t o = 0; o < p.out_features; ++o) {
                const double g = dy[o];
                const double* row = &params_[slot.weight_offset + o * p.in_features];
                if (grad) {
                    (*grad)[slot.bias_offset + o] += g;
                    double* grow = &(*grad)[slot.weight_offset + o * p.in_features];
                    for (std::size_t i = 0; i < p.in_features; ++i)
                        grow[i] += g * tr.input[i];
                }
                for (std::size_t i = 0; i < p.in_features; ++i)
                    dx[i] += row[i] * g;
            }
            return dx;
        }
        case LayerKind::relu: {
            std::vector<double> dx(dy.size());
            for (std::size_t i = 0; i < dy.size(); ++i)
                dx[i] = tr.input[i] > 0.0 ? dy[i] : 0.0;
            return dx;
        }
        case LayerKind::max_pool:
        case LayerKind::avg_pool: {
            const auto& p = l.pool();
            std::vector<double> dx(tr.input.size(), 0.0);
            for (std::size_t o = 0; o < dy.size(); ++o) {
                if (l.kind == LayerKind::max_pool) {
                    dx[tr.argmax[o]] += dy[o];
                } else {
                    for (std::size_t k = o * p.stride; k < o * p.stride + p.window; ++k)
                        dx[k] += dy[o] / static_cast<double>(p.window);
                }
            }
            return dx;
        }
        case LayerKind::dropout_point: {
            std::vector<double> dx(dy.size());
            for (std::size_t i = 0; i < dy.size(); ++i)
                dx[i] = dy[i] * tr.mask[i];
            return dx;
        }
        default:
            return dy;
        }
    };

    const auto& trunk = me_.trunk.layers;
    std::vector<Trace> trunk_trace(trunk.size());
    std::vector<std::vector<double>> trunk_out(trunk.size());
    std::vector<double> cur(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < trunk.size(); ++i) {
        cur = forward_layer(trunk[i], cur, trunk_trace[i]);
        trunk_out[i] = cur;
    }

    std::vector<std::vector<double>> d_trunk_out(trunk.size());
    std::vector<double> d_input;
    double loss = 0.0;
    for (std::size_t k = 0; k < me_.exits.size(); ++k) {
        const long a = me_.attach_index(k);
        std::vector<double> h = a < 0 ? std::vector<double>(x.data().begin(), x.data().end())
                                      : trunk_out[static_cast<std::size_t>(a)];
        const auto& head = me_.exits[k].head_layers;
        std::vector<Trace> head_trace(head.size() - 1);
        for (std::size_t i = 0; i + 1 < head.size(); ++i)
            h = forward_layer(head[i], h, head_trace[i]);

        const auto probs = softmax(std::span<const double>(h));
        loss -= std::log(std::max(probs[static_cast<std::size_t>(label)], std::numeric_limits<double>::min()));
        if (!grad)
            continue;

        std::vector<double> g = probs;
        g[static_cast<std::size_t>(label)] -= 1.0;
        for (std::size_t i = head.size() - 1; i-- > 0;)
            g = backward_layer(head[i], head_trace[i], g);
        auto& acc = a < 0 ? d_input : d_trunk_out[static_cast<std::size_t>(a)];
        if (acc.empty())
            acc.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i)
            acc[i] += g[i];
    }

    if (grad && !trunk.empty()) {
        std::vector<double> g = d_trunk_out.back();
        for (std::size_t i = trunk.size(); i-- > 0;) {
            if (g.empty()) {
                if (i > 0)
                    g = d_trunk_out[i - 1];
                continue;
            }
            g = backward_layer(trunk[i], trunk_trace[i], g);
            if (i > 0 && !d_trunk_out[i - 1].empty())
                for (std::size_t j = 0; j < g.size(); ++j)
                    g[j] += d_trunk_out[i - 1][j];
        }
    }
    return loss;
}

double ToyTrainer::loss(std::span<const Tensor> inputs, std::span<const int> labels, std::uint64_t dropout_seed,
                        std::uint64_t first_sample) const
{
    double total = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        total += sample_pass(inputs[i], labels[i], dropout_seed, first_sample + i, nullptr);
    return total / static_cast<double>(inputs.size());
}

double ToyTrainer::loss_and_gradient(std::span<const Tensor> inputs, std::span<const int> labels,
                                     std::uint64_t dropout_seed, std::uint64_t first_sample,
                                     std::vector<double>& grad) const
{
    grad.assign(params_.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        total += sample_pass(inputs[i], labels[i], dropout_seed, first_sample + i, &grad);
    const double n = static_cast<double>(inputs.size());
    for (auto& g : grad)
        g /= n;
    return total / n;
}

void ToyTrainer::sgd_step(std::span<const double> grad, double lr)
{
    for (std::size_t i = 0; i < params_.size(); ++i)
        params_[i] -= lr * grad[i];
}

WeightStore ToyTrainer::export_weights() const
{
    WeightStore store;
    for (const auto& ref : me_.all_layers()) {
        const auto& l = *ref.layer;
        if (!is_learnable(l.kind))
            continue;
        const auto [wshape, bshape] = parameter_shapes(l);
        const auto& slot = slots_.at(l.id);
        std::vector<float> w(shape_numel(wshape)), b(shape_numel(bshape));
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] = static_cast<float>(params_[slot.weight_offset + i]);
        for (std::size_t i = 0; i < b.size(); ++i)
            b[i] = static_cast<float>(params_[slot.bias_offset + i]);
        store.set(l.id, "weight", Tensor(wshape, std::move(w)));
        store.set(l.id, "bias", Tensor(bshape, std::move(b)));
    }
    return store;
}

WeightStore train_toy(const MultiExitSpec& me, const Dataset& data, const TrainHyperParams& hparams)
{
    data.validate();
    if (hparams.batch < 1 || hparams.epochs < 0)
        throw InvalidArgument("train_toy: batch must be >= 1 and epochs >= 0");
    if (data.feature_shape != me.trunk.input_shape)
        throw ShapeError("train_toy: dataset features " + shape_to_string(data.feature_shape)
                         + " do not match network input " + shape_to_string(me.trunk.input_shape));

    const WeightStore init = init_weights(me, hparams.seed);
    if (hparams.lr == 0.0)
        return init;
    ToyTrainer trainer(me, init);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad;
    std::vector<Tensor> batch_x;
    std::vector<int> batch_y;
    std::uint64_t sample_counter = 0;
    for (int epoch = 0; epoch < hparams.epochs; ++epoch) {
        RngStream shuffle(hparams.seed, static_cast<std::uint64_t>(epoch), "shuffle");
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle.next_below(i)]);
        for (std::size_t start = 0; start < order.size(); start += hparams.batch) {
            const std::size_t end = std::min(order.size(), start + hparams.batch);
            batch_x.clear();
            batch_y.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch_x.push_back(data.inputs[order[i]]);
                batch_y.push_back(data.labels[order[i]]);
            }
            trainer.loss_and_gradient(batch_x, batch_y, hparams.seed ^ 0x5eedd20u, sample_counter, grad);
            trainer.sgd_step(grad, hparams.lr);
            sample_counter += batch_x.size();
        }
    }
    return trainer.export_weights();
}

}  // namespace mebnn
