#include "mebnn/layers.hpp"

#include "mebnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mebnn {

namespace {

Tensor conv2d_forward(const LayerSpec& layer, const Tensor& in, const Tensor& w, const Tensor& b,
                      std::uint64_t& macs)
{
    const auto& p = layer.conv();
    const Shape out_shape = infer_output_shape(layer, in.shape());
    Tensor out(out_shape);
    const long H = static_cast<long>(in.shape()[1]);
    const long W = static_cast<long>(in.shape()[2]);
    const long pad = static_cast<long>(p.padding);
    for (std::size_t oc = 0; oc < out_shape[0]; ++oc) {
        for (std::size_t oy = 0; oy < out_shape[1]; ++oy) {
            for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
                float acc = b[oc];
                for (std::size_t ic = 0; ic < p.in_channels; ++ic) {
                    for (std::size_t ky = 0; ky < p.kernel_h; ++ky) {
                        for (std::size_t kx = 0; kx < p.kernel_w; ++kx) {
                            ++macs;
                            const long iy = static_cast<long>(oy * p.stride + ky) - pad;
                            const long ix = static_cast<long>(ox * p.stride + kx) - pad;
                            if (iy < 0 || ix < 0 || iy >= H || ix >= W)
                                continue;
                            const float wv =
                                w[((oc * p.in_channels + ic) * p.kernel_h + ky) * p.kernel_w + kx];
                            acc += wv * in.at(ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                        }
                    }
                }
                out.at(oc, oy, ox) = acc;
            }
        }
    }
    return out;
}

Tensor dense_forward(const LayerSpec& layer, const Tensor& in, const Tensor& w, const Tensor& b, std::uint64_t& macs)
{
    const auto& p = layer.dense();
    Tensor out({p.out_features});
    const auto x = in.data();
    for (std::size_t o = 0; o < p.out_features; ++o) {
        float acc = b[o];
        const std::size_t row = o * p.in_features;
        for (std::size_t i = 0; i < p.in_features; ++i) {
            acc += w[row + i] * x[i];
            ++macs;
        }
        out[o] = acc;
    }
    return out;
}

Tensor pool_forward(const LayerSpec& layer, const Tensor& in)
{
    const auto& p = layer.pool();
    const bool is_max = layer.kind == LayerKind::max_pool;
    const Shape out_shape = infer_output_shape(layer, in.shape());
    Tensor out(out_shape);
    // rank-1 inputs pool along their single axis
    const std::size_t C = in.rank() == 3 ? in.shape()[0] : 1;
    const std::size_t H = in.rank() == 3 ? in.shape()[1] : 1;
    const std::size_t W = in.rank() == 3 ? in.shape()[2] : in.shape()[0];
    const std::size_t OH = in.rank() == 3 ? out_shape[1] : 1;
    const std::size_t OW = in.rank() == 3 ? out_shape[2] : out_shape[0];
    const std::size_t wh = in.rank() == 3 ? p.window : 1;
    const std::size_t sh = in.rank() == 3 ? p.stride : 1;
    const auto src = in.data();
    auto dst = out.data();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                float acc = is_max ? -std::numeric_limits<float>::infinity() : 0.0f;
                for (std::size_t ky = 0; ky < wh; ++ky) {
                    for (std::size_t kx = 0; kx < p.window; ++kx) {
                        const float v = src[(c * H + oy * sh + ky) * W + ox * p.stride + kx];
                        acc = is_max ? std::max(acc, v) : acc + v;
                    }
                }
                if (!is_max)
                    acc /= static_cast<float>(wh * p.window);
                dst[(c * OH + oy) * OW + ox] = acc;
            }
        }
    }
    return out;
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits)
{
    std::vector<double> out(logits.size());
    if (logits.empty())
        return out;
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (auto& v : out)
        v /= sum;
    return out;
}

std::vector<double> softmax(std::span<const float> logits)
{
    std::vector<double> wide(logits.begin(), logits.end());
    return softmax(std::span<const double>(wide));
}

Tensor forward(const LayerSpec& layer, const Tensor& input, const WeightStore& weights,
               const std::optional<QFormat>& qformat, ExecStats* stats)
{
    std::uint64_t macs = 0;
    Tensor out;
    switch (layer.kind) {
    case LayerKind::conv2d:
    case LayerKind::dense: {
        infer_output_shape(layer, input.shape());
        auto [wshape, bshape] = parameter_shapes(layer);
        const Tensor* w = &weights.get(layer.id, "weight");
        const Tensor* b = &weights.get(layer.id, "bias");
        if (w->shape() != wshape || b->shape() != bshape)
            throw ShapeError("weights for layer '" + layer.id + "' have shape " + shape_to_string(w->shape())
                             + ", expected " + shape_to_string(wshape));
        Tensor wq, bq;
        if (qformat) {
            wq = quantize(*w, *qformat);
            bq = quantize(*b, *qformat);
            w = &wq;
            b = &bq;
        }
        out = layer.kind == LayerKind::dense ? dense_forward(layer, input, *w, *b, macs)
                                             : conv2d_forward(layer, input, *w, *b, macs);
        break;
    }
    case LayerKind::max_pool:
    case LayerKind::avg_pool:
        out = pool_forward(layer, input);
        break;
    case LayerKind::relu:
        out = input;
        for (auto& v : out.data())
            v = std::max(v, 0.0f);
        break;
    case LayerKind::softmax: {
        const auto probs = softmax(input.data());
        out = Tensor(input.shape());
        for (std::size_t i = 0; i < probs.size(); ++i)
            out[i] = static_cast<float>(probs[i]);
        break;
    }
    case LayerKind::flatten:
        out = input.reshaped({input.numel()});
        break;
    case LayerKind::dropout_point:
        out = input;
        break;
    }
    if (qformat)
        quantize_inplace(out.data(), *qformat);
    if (stats) {
        stats->flops += 2 * macs;
        ++stats->layers;
    }
    return out;
}

Tensor forward_chain(std::span<const LayerSpec> layers, const Tensor& input, const WeightStore& weights,
                     const std::optional<QFormat>& qformat, ExecStats* stats)
{
    Tensor cur = input;
    for (const auto& l : layers)
        cur = forward(l, cur, weights, qformat, stats);
    return cur;
}

}  // namespace mebnn
