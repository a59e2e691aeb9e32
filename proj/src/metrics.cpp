#include "mebnn/metrics.hpp"

#include "mebnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace mebnn {

std::uint64_t layer_flops(const LayerSpec& layer, const Shape& input_shape)
{
    if (layer.kind == LayerKind::dense) {
        const auto& p = layer.dense();
        return 2ull * p.in_features * p.out_features;
    }
    if (layer.kind == LayerKind::conv2d) {
        const auto& p = layer.conv();
        const Shape out = infer_output_shape(layer, input_shape);
        return 2ull * p.kernel_h * p.kernel_w * p.in_channels * p.out_channels * out[1] * out[2];
    }
    return 0;
}

std::uint64_t network_flops(const NetworkSpec& net)
{
    std::uint64_t total = 0;
    Shape cur = net.input_shape;
    for (const auto& l : net.layers) {
        total += layer_flops(l, cur);
        cur = infer_output_shape(l, cur);
    }
    return total;
}

FlopReport make_flop_report(std::uint64_t flop_main, std::vector<std::uint64_t> per_exit)
{
    FlopReport r;
    r.flop_main = flop_main;
    r.per_exit = std::move(per_exit);
    for (auto f : r.per_exit)
        r.flop_exit_total += f;
    if (r.flop_exit_total == 0)
        r.alpha = 0.0;
    else if (r.flop_main == 0)
        r.alpha = std::numeric_limits<double>::infinity();
    else
        r.alpha = static_cast<double>(r.flop_exit_total) / static_cast<double>(r.flop_main);
    return r;
}

FlopReport count_flops(const MultiExitSpec& me)
{
    const auto& trunk = me.trunk.layers;
    const std::size_t boundary = me.bayes_boundary();
    std::vector<std::uint64_t> trunk_flops(trunk.size());
    std::vector<Shape> trunk_out(trunk.size());
    Shape cur = me.trunk.input_shape;
    for (std::size_t i = 0; i < trunk.size(); ++i) {
        trunk_flops[i] = layer_flops(trunk[i], cur);
        cur = infer_output_shape(trunk[i], cur);
        trunk_out[i] = cur;
    }

    std::uint64_t main = 0;
    for (std::size_t i = 0; i < boundary; ++i)
        main += trunk_flops[i];

    std::vector<std::uint64_t> per_exit;
    for (std::size_t k = 0; k < me.exits.size(); ++k) {
        const long a = me.attach_index(k);
        const auto attach_end = static_cast<std::size_t>(a + 1);
        std::uint64_t f = 0;
        for (std::size_t i = std::min(attach_end, boundary); i < attach_end; ++i)
            f += trunk_flops[i];
        Shape s = a < 0 ? me.trunk.input_shape : trunk_out[static_cast<std::size_t>(a)];
        for (const auto& l : me.exits[k].head_layers) {
            f += layer_flops(l, s);
            s = infer_output_shape(l, s);
        }
        per_exit.push_back(f);
    }
    return make_flop_report(main, std::move(per_exit));
}

std::uint64_t cost_single_exit(const FlopReport& report, std::uint64_t n_sample)
{
    if (n_sample < 1)
        throw InvalidArgument("cost_single_exit: n_sample must be >= 1");
    return n_sample * (report.flop_main + report.flop_exit_total);
}

double cost_multi_exit(const FlopReport& report, std::uint64_t n_sample, std::uint64_t n_exit, bool strict)
{
    if (n_sample < 1 || n_exit < 1)
        throw InvalidArgument("cost_multi_exit: n_sample and n_exit must be >= 1");
    if (strict && n_sample % n_exit != 0)
        throw InvalidArgument("cost_multi_exit: n_exit (" + std::to_string(n_exit) + ") does not divide n_sample ("
                              + std::to_string(n_sample) + ")");
    return static_cast<double>(report.flop_main)
           + static_cast<double>(n_sample) / static_cast<double>(n_exit) * static_cast<double>(report.flop_exit_total);
}

double reduction_rate(double alpha, std::uint64_t n_sample, std::uint64_t n_exit)
{
    if (n_sample < 1 || n_exit < 1)
        throw InvalidArgument("reduction_rate: n_sample and n_exit must be >= 1");
    if (!(alpha >= 0.0))
        throw InvalidArgument("reduction_rate: alpha must be >= 0");
    // (1 + a) / (1/Ns + a/Ne) rearranged so that Ns == Ne yields exactly Ns.
    const double ns = static_cast<double>(n_sample);
    return ns * ((1.0 + alpha) / (1.0 + alpha * (ns / static_cast<double>(n_exit))));
}

std::size_t argmax(const ProbVector& p)
{
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

double accuracy(std::span<const ProbVector> probs, std::span<const int> labels)
{
    if (probs.size() != labels.size())
        throw InvalidArgument("accuracy: probs and labels differ in length");
    if (probs.empty())
        return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        correct += static_cast<int>(argmax(probs[i])) == labels[i];
    return static_cast<double>(correct) / static_cast<double>(probs.size());
}

double expected_calibration_error(std::span<const ProbVector> probs, std::span<const int> labels, std::size_t n_bins)
{
    if (probs.size() != labels.size())
        throw InvalidArgument("expected_calibration_error: " + std::to_string(probs.size()) + " predictions but "
                              + std::to_string(labels.size()) + " labels");
    if (n_bins < 1)
        throw InvalidArgument("expected_calibration_error: n_bins must be >= 1");
    if (probs.empty())
        return 0.0;

    std::vector<double> conf_sum(n_bins, 0.0), hits(n_bins, 0.0), count(n_bins, 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const std::size_t pred = argmax(probs[i]);
        const double conf = probs[i][pred];
        auto bin = static_cast<std::size_t>(conf * static_cast<double>(n_bins));
        bin = std::min(bin, n_bins - 1);
        conf_sum[bin] += conf;
        hits[bin] += static_cast<int>(pred) == labels[i] ? 1.0 : 0.0;
        count[bin] += 1.0;
    }
    const double n = static_cast<double>(probs.size());
    double ece = 0.0;
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (count[b] == 0.0)
            continue;
        ece += count[b] / n * std::abs(hits[b] / count[b] - conf_sum[b] / count[b]);
    }
    return ece;
}

double predictive_entropy(const ProbVector& probs)
{
    double h = 0.0;
    for (double p : probs) {
        if (p < 0.0)
            throw InvalidArgument("predictive_entropy: negative probability");
        if (p > 0.0)
            h -= p * std::log(p);
    }
    return h;
}

double average_predictive_entropy(const BayesianRunner& runner, const NoiseSpec& noise, std::size_t n_pass,
                                  std::uint64_t seed)
{
    if (noise.count < 1)
        throw InvalidArgument("average_predictive_entropy: noise count must be >= 1");
    const auto inputs = gaussian_noise(runner.spec().trunk.input_shape, noise);
    double total = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        total += predictive_entropy(ensemble(runner.predict(inputs[i], n_pass, seed + i)));
    return total / static_cast<double>(inputs.size());
}

double average_predictive_entropy(const MultiExitSpec& me, const WeightStore& weights, const NoiseSpec& noise,
                                  std::size_t n_pass, std::uint64_t seed)
{
    return average_predictive_entropy(BayesianRunner(me, weights), noise, n_pass, seed);
}

void MetricsReport::validate() const
{
    for (double v : {accuracy, ece, ape, flops_fraction})
        if (!std::isfinite(v))
            throw InvalidArgument("metrics report holds a non-finite value");
}

nlohmann::json metrics_to_json(const MetricsReport& m)
{
    nlohmann::json j = {{"accuracy", m.accuracy}, {"ece", m.ece},           {"ape", m.ape},
                        {"flops_fraction", m.flops_fraction}, {"n_sample", m.n_sample}};
    if (m.flops_fraction_early_exit)
        j["flops_fraction_early_exit"] = *m.flops_fraction_early_exit;
    return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j)
{
    MetricsReport m;
    m.accuracy = j.at("accuracy").get<double>();
    m.ece = j.at("ece").get<double>();
    m.ape = j.at("ape").get<double>();
    m.flops_fraction = j.at("flops_fraction").get<double>();
    m.n_sample = j.at("n_sample").get<std::uint64_t>();
    if (j.contains("flops_fraction_early_exit"))
        m.flops_fraction_early_exit = j.at("flops_fraction_early_exit").get<double>();
    return m;
}

std::string metrics_csv_header()
{
    return "accuracy,ece,ape,flops_fraction,flops_fraction_early_exit,n_sample";
}

std::string metrics_csv_row(const MetricsReport& m)
{
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,", m.accuracy, m.ece, m.ape, m.flops_fraction);
    std::string row = buf;
    if (m.flops_fraction_early_exit) {
        std::snprintf(buf, sizeof(buf), "%.6f", *m.flops_fraction_early_exit);
        row += buf;
    }
    return row + "," + std::to_string(m.n_sample);
}

}  // namespace mebnn
