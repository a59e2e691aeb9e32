#include "doctest.h"
#include "support.hpp"

#include "mebnn/error.hpp"
#include "mebnn/inference.hpp"
#include "mebnn/layers.hpp"
#include "mebnn/metrics.hpp"

#include <cmath>
#include <numbers>

using namespace mebnn;
using testsupport::Gen;

namespace {

// Bin membership by interval test [lo, hi), last bin closed, then
// per-bin averages; written without sharing code with the library.
double ece_brute_force(const std::vector<ProbVector>& probs, const std::vector<int>& labels, std::size_t n_bins)
{
    const double n = static_cast<double>(probs.size());
    double total = 0.0;
    for (std::size_t b = 0; b < n_bins; ++b) {
        const double lo = static_cast<double>(b) / static_cast<double>(n_bins);
        const double hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
        double count = 0.0, correct = 0.0, conf_sum = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < probs[i].size(); ++c)
                if (probs[i][c] > probs[i][best])
                    best = c;
            const double conf = probs[i][best];
            const bool inside = b + 1 == n_bins ? conf >= lo : conf >= lo && conf < hi;
            if (!inside)
                continue;
            count += 1;
            conf_sum += conf;
            correct += static_cast<int>(best) == labels[i] ? 1.0 : 0.0;
        }
        if (count > 0)
            total += count / n * std::abs(correct / count - conf_sum / count);
    }
    return total;
}

NetworkSpec two_dense()
{
    NetworkSpec net;
    net.input_shape = {3};
    net.layers = {LayerSpec::dense("a", 3, 4), LayerSpec::simple("relu", LayerKind::relu), LayerSpec::dense("b", 4, 2),
                  LayerSpec::simple("softmax", LayerKind::softmax)};
    return net;
}

}  // namespace

TEST_CASE("layer FLOP examples")
{
    CHECK(layer_flops(LayerSpec::dense("d", 3, 4), {3}) == 24);
    // 1x1 conv, Cin=2, Cout=3, 2x2 output: 24 multiplies + 24 adds
    CHECK(layer_flops(LayerSpec::conv2d("c", {2, 3, 1, 1, 1, 0}), {2, 2, 2}) == 48);
    CHECK(layer_flops(LayerSpec::simple("r", LayerKind::relu), {10}) == 0);
    CHECK(layer_flops(LayerSpec::pool("p", LayerKind::max_pool, 2, 2), {1, 4, 4}) == 0);
}

TEST_CASE("count_flops splits trunk and exit work at the dropout boundary")
{
    const MultiExitSpec me = insert_dropout(place_exits(two_dense()), DropoutConfig::mcd(0.5), 1);
    const FlopReport r = count_flops(me);
    CHECK(r.flop_main == 24);
    REQUIRE(r.per_exit.size() == 1);
    CHECK(r.per_exit[0] == 16);
    CHECK(r.flop_exit_total == 16);
    CHECK(r.alpha == doctest::Approx(16.0 / 24.0));
    // depth 2 moves layer a behind the boundary
    const FlopReport r2 = count_flops(insert_dropout(place_exits(two_dense()), DropoutConfig::mcd(0.5), 2));
    CHECK(r2.flop_main == 0);
    CHECK(r2.per_exit[0] == 40);
}

TEST_CASE("cost formulas")
{
    const FlopReport r = make_flop_report(100, {10});
    CHECK(cost_single_exit(r, 1) == 110);
    CHECK(cost_single_exit(r, 5) == 550);
    const FlopReport r2 = make_flop_report(100, {4, 6});
    CHECK(cost_multi_exit(r2, 4, 2) == 120.0);
    CHECK(cost_multi_exit(r2, 2, 2) == 110.0);
    CHECK_THROWS_AS(cost_multi_exit(r2, 3, 2, true), InvalidArgument);
    CHECK(cost_multi_exit(r2, 3, 2) == 115.0);

    const MultiExitSpec me = place_exits(two_dense());
    CHECK(cost_single_exit(count_flops(me), 3) == 3 * network_flops(two_dense()));
}

TEST_CASE("reduction rate identities")
{
    for (double alpha : {0.0, 0.1, 1.0, 7.5})
        for (std::uint64_t n : {1, 2, 6, 12})
            CHECK(reduction_rate(alpha, n, n) == static_cast<double>(n));
    CHECK(reduction_rate(1.0, 4, 2) == doctest::Approx(8.0 / 3.0).epsilon(1e-12));
    CHECK(reduction_rate(1e-12, 8, 2) == doctest::Approx(8.0).epsilon(1e-9));
}

TEST_CASE("property: reduction rate times multi-exit cost equals single-exit cost")
{
    Gen g(127);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::uint64_t main = g.range(1, 10000000);
        const std::size_t ne = g.range(1, 8);
        std::vector<std::uint64_t> per(ne);
        for (auto& v : per)
            v = g.range(0, 1000000);
        const FlopReport r = make_flop_report(main, per);
        const std::uint64_t ns = ne * g.range(1, 8);
        const double lhs = reduction_rate(r.alpha, ns, ne) * cost_multi_exit(r, ns, ne);
        const double rhs = static_cast<double>(cost_single_exit(r, ns));
        CHECK(std::abs(lhs - rhs) <= 1e-12 * rhs);
    }
}

TEST_CASE("property: instrumented predict FLOPs equal the multi-exit cost")
{
    Gen g(131);
    for (int trial = 0; trial < 20; ++trial) {
        const NetworkSpec net = trial % 2 ? testsupport::random_conv_net(g) : testsupport::random_dense_net(g);
        const MultiExitSpec me = insert_dropout(place_exits(net), DropoutConfig::mcd(0.75), trial % 3 ? 1 : 2);
        const BayesianRunner runner(me, init_weights(me, trial));
        const std::size_t n_pass = g.range(1, 4);
        ExecStats stats;
        runner.predict(testsupport::random_tensor(g, net.input_shape), n_pass, 1, &stats);
        const FlopReport r = count_flops(me);
        CHECK(static_cast<double>(stats.flops) == cost_multi_exit(r, n_pass * me.n_exit(), me.n_exit(), true));
    }
}

TEST_CASE("property: FLOP counts are additive over concatenation")
{
    Gen g(137);
    for (int trial = 0; trial < 50; ++trial) {
        const NetworkSpec net = trial % 2 ? testsupport::random_conv_net(g) : testsupport::random_dense_net(g);
        const std::size_t cut = g.range(1, net.layers.size() - 1);
        NetworkSpec head{net.input_shape, {net.layers.begin(), net.layers.begin() + cut}};
        NetworkSpec tail{net.layer_output_shapes()[cut - 1], {net.layers.begin() + cut, net.layers.end()}};
        CHECK(network_flops(net) == network_flops(head) + network_flops(tail));
    }
}

TEST_CASE("ECE examples")
{
    CHECK(expected_calibration_error(std::vector<ProbVector>{{1.0, 0.0}, {0.0, 1.0}}, std::vector<int>{0, 1}) == 0.0);
    CHECK(expected_calibration_error(std::vector<ProbVector>{{0.8, 0.2}}, std::vector<int>{1}, 1)
          == doctest::Approx(0.8));
    CHECK(expected_calibration_error(std::vector<ProbVector>{{0.6, 0.4}, {0.8, 0.2}}, std::vector<int>{0, 1}, 1)
          == doctest::Approx(0.2));
    CHECK_THROWS_AS(expected_calibration_error(std::vector<ProbVector>{{0.6, 0.4}}, std::vector<int>{0, 1}),
                    InvalidArgument);
}

TEST_CASE("property: ECE matches the brute-force oracle and its bounds")
{
    Gen g(139);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = g.range(1, 64), classes = g.range(2, 10), bins = g.range(1, 20);
        std::vector<ProbVector> probs;
        std::vector<int> labels;
        for (std::size_t i = 0; i < n; ++i) {
            probs.push_back(testsupport::random_probs(g, classes));
            labels.push_back(static_cast<int>(g.range(0, classes - 1)));
        }
        const double ece = expected_calibration_error(probs, labels, bins);
        CHECK(std::abs(ece - ece_brute_force(probs, labels, bins)) <= 1e-12);
        CHECK(ece >= 0.0);
        CHECK(ece <= 1.0);
        double conf = 0.0;
        for (const auto& p : probs)
            conf += p[argmax(p)];
        const double one_bin = std::abs(accuracy(probs, labels) - conf / static_cast<double>(n));
        CHECK(expected_calibration_error(probs, labels, 1) == doctest::Approx(one_bin).epsilon(1e-12));
    }
}

TEST_CASE("predictive entropy examples and bounds")
{
    CHECK(predictive_entropy({0.0, 1.0, 0.0}) == 0.0);
    CHECK(std::abs(predictive_entropy(ProbVector(10, 0.1)) - std::log(10.0)) <= 1e-12);
    CHECK(predictive_entropy({0.5, 0.25, 0.25}) == doctest::Approx(1.5 * std::numbers::ln2).epsilon(1e-12));
    CHECK_THROWS_AS(predictive_entropy({1.5, -0.5}), InvalidArgument);
    Gen g(149);
    for (int trial = 0; trial < 500; ++trial) {
        const auto p = testsupport::random_probs(g, g.range(2, 12));
        const double h = predictive_entropy(p);
        CHECK(h >= 0.0);
        CHECK(h <= std::log(static_cast<double>(p.size())) + 1e-12);
    }
}

TEST_CASE("aPE of a net with zero final heads is ln(class_count)")
{
    Gen g(151);
    const NetworkSpec net = testsupport::random_dense_net(g, 3, 5);
    const MultiExitSpec me = insert_dropout(place_exits(net), DropoutConfig::mcd(0.75), 1);
    WeightStore w = init_weights(me, 1);
    for (const auto& e : me.exits)
        for (const auto& l : e.head_layers)
            if (l.kind == LayerKind::dense) {
                const auto [ws, bs] = parameter_shapes(l);
                w.set(l.id, "weight", Tensor(ws, 0.0f));
                w.set(l.id, "bias", Tensor(bs, 0.0f));
            }
    NoiseSpec noise{std::vector<double>(net.input_shape[0], 0.0), std::vector<double>(net.input_shape[0], 1.0), 20, 3};
    CHECK(std::abs(average_predictive_entropy(me, w, noise, 2, 5) - std::log(5.0)) <= 1e-9);
}

TEST_CASE("aPE with one noise input equals that input's ensemble entropy")
{
    Gen g(157);
    const NetworkSpec net = testsupport::random_dense_net(g);
    const MultiExitSpec me = insert_dropout(place_exits(net), DropoutConfig::mcd(0.75), 1);
    const WeightStore w = init_weights(me, 2);
    const std::size_t f = net.input_shape[0];
    NoiseSpec noise{std::vector<double>(f, 0.5), std::vector<double>(f, 2.0), 1, 8};
    const Tensor x = gaussian_noise(net.input_shape, noise)[0];
    const double expect = predictive_entropy(ensemble(predict(me, x, 3, w, 4)));
    CHECK(average_predictive_entropy(me, w, noise, 3, 4) == expect);
    noise.count = 10;
    CHECK(average_predictive_entropy(me, w, noise, 3, 4) == average_predictive_entropy(me, w, noise, 3, 4));
}

TEST_CASE("gaussian noise follows the requested moments")
{
    NoiseSpec spec{{1.0, -2.0}, {0.5, 3.0}, 20000, 1};
    const auto xs = gaussian_noise({2}, spec);
    REQUIRE(xs.size() == 20000);
    for (std::size_t f = 0; f < 2; ++f) {
        double sum = 0.0, sq = 0.0;
        for (const auto& x : xs) {
            sum += x[f];
            sq += static_cast<double>(x[f]) * x[f];
        }
        const double mean = sum / 20000, var = sq / 20000 - mean * mean;
        CHECK(std::abs(mean - spec.mean[f]) <= 0.05 * spec.stddev[f]);
        CHECK(std::sqrt(var) == doctest::Approx(spec.stddev[f]).epsilon(0.03));
    }
}

TEST_CASE("metrics report serialization")
{
    MetricsReport m{0.9, 0.05, 1.2, 0.4, 0.3, 6};
    CHECK(metrics_from_json(metrics_to_json(m)) == m);
    MetricsReport plain = m;
    plain.flops_fraction_early_exit.reset();
    CHECK(metrics_from_json(metrics_to_json(plain)) == plain);
    CHECK(metrics_csv_header() == "accuracy,ece,ape,flops_fraction,flops_fraction_early_exit,n_sample");
    CHECK(metrics_csv_row(m) == "0.900000,0.050000,1.200000,0.400000,0.300000,6");
    m.flops_fraction_early_exit.reset();
    CHECK(metrics_csv_row(m) == "0.900000,0.050000,1.200000,0.400000,,6");
}
