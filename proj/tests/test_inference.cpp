#include "doctest.h"
#include "support.hpp"

#include "mebnn/error.hpp"
#include "mebnn/inference.hpp"
#include "mebnn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mebnn;
using testsupport::Gen;

namespace {

MultiExitSpec with_dropout(const NetworkSpec& net, DropoutKind kind, std::size_t depth = 1)
{
    const DropoutConfig cfg = kind == DropoutKind::mcd ? DropoutConfig::mcd(0.5) : DropoutConfig::masksembles(2, 1.5);
    return insert_dropout(place_exits(net), cfg, depth);
}

// Two exits: exit 1 reads pool1, exit 2 is the original classifier.
NetworkSpec two_exit_net()
{
    NetworkSpec net;
    net.input_shape = {2};
    net.layers = {LayerSpec::dense("fc1", 2, 4), LayerSpec::simple("relu1", LayerKind::relu),
                  LayerSpec::pool("pool1", LayerKind::max_pool, 2, 2), LayerSpec::dense("fc2", 2, 4),
                  LayerSpec::dense("out", 4, 2), LayerSpec::simple("softmax", LayerKind::softmax)};
    return net;
}

// Zero weights and log-probability biases make a head output `probs` exactly.
void set_constant_head(WeightStore& w, const std::string& id, std::size_t in, std::vector<double> probs)
{
    std::vector<float> bias;
    for (double p : probs)
        bias.push_back(static_cast<float>(std::log(p)));
    w.set(id, "weight", Tensor({probs.size(), in}, 0.0f));
    w.set(id, "bias", Tensor({probs.size()}, bias));
}

}  // namespace

TEST_CASE("run_trunk on a 1-exit net yields the pre-head activation")
{
    NetworkSpec net;
    net.input_shape = {3};
    net.layers = {LayerSpec::dense("fc1", 3, 4), LayerSpec::simple("relu", LayerKind::relu),
                  LayerSpec::dense("out", 4, 2), LayerSpec::simple("softmax", LayerKind::softmax)};
    const MultiExitSpec me = place_exits(net);
    const WeightStore w = init_weights(me, 1);
    const Tensor x = Tensor::vector({0.5f, -1.0f, 2.0f});
    const CachedFeatures c = run_trunk(me, x, w);
    REQUIRE(c.entries.size() == 1);
    const std::vector<LayerSpec> prefix(net.layers.begin(), net.layers.begin() + 2);
    CHECK(c.at("relu") == forward_chain(prefix, x, w));
    CHECK(run_trunk(me, x, w).entries[0].features == c.entries[0].features);
}

TEST_CASE("run_trunk entries equal truncated forward passes")
{
    Gen g(83);
    for (int trial = 0; trial < 20; ++trial) {
        const NetworkSpec net = trial % 2 ? testsupport::random_conv_net(g) : testsupport::random_dense_net(g);
        const MultiExitSpec me = with_dropout(net, DropoutKind::mcd);
        const WeightStore w = init_weights(me, trial);
        const Tensor x = testsupport::random_tensor(g, net.input_shape);
        const CachedFeatures c = run_trunk(me, x, w);
        REQUIRE(c.entries.size() == me.n_exit());
        for (std::size_t k = 0; k < me.n_exit(); ++k) {
            const auto end = me.trunk.layers.begin() + (me.attach_index(k) + 1);
            const std::vector<LayerSpec> prefix(me.trunk.layers.begin(), end);
            CHECK(c.entries[k].features == forward_chain(prefix, x, w));
        }
    }
}

TEST_CASE("run_exit_samples with keep_rate 1 gives identical passes")
{
    Gen g(89);
    const NetworkSpec net = testsupport::random_dense_net(g);
    const MultiExitSpec me = insert_dropout(place_exits(net), DropoutConfig::mcd(1.0), 1);
    const WeightStore w = init_weights(me, 2);
    const CachedFeatures c = run_trunk(me, testsupport::random_tensor(g, net.input_shape), w);
    const auto s = run_exit_samples(c, me, static_cast<int>(me.n_exit()), 3, w, 7);
    REQUIRE(s.size() == 3);
    CHECK(s[0] == s[1]);
    CHECK(s[1] == s[2]);
}

TEST_CASE("masksembles passes differ and are reproducible")
{
    Gen g(97);
    const NetworkSpec net = testsupport::random_dense_net(g);
    const MultiExitSpec me = insert_dropout(place_exits(net), DropoutConfig::masksembles(2, 1.0), 1);
    const WeightStore w = init_weights(me, 3);
    const CachedFeatures c = run_trunk(me, testsupport::random_tensor(g, net.input_shape, 0.5, 1.0), w);
    const auto a = run_exit_samples(c, me, 1, 2, w, 0);
    CHECK(a[0] != a[1]);
    CHECK(run_exit_samples(c, me, 1, 2, w, 0) == a);
    CHECK_THROWS_AS(run_exit_samples(c, me, 1, 3, w, 0), InvalidArgument);
}

TEST_CASE("MCD samples equal independent single-pass calls")
{
    Gen g(101);
    const NetworkSpec net = testsupport::random_dense_net(g);
    const MultiExitSpec me = with_dropout(net, DropoutKind::mcd);
    const WeightStore w = init_weights(me, 4);
    const BayesianRunner runner(me, w);
    const CachedFeatures c = runner.run_trunk(testsupport::random_tensor(g, net.input_shape));
    const auto batch = runner.run_exit_samples(c, 0, 4, 11);
    for (std::size_t p = 0; p < 4; ++p)
        CHECK(batch[p] == runner.run_exit_pass(c, 0, p, 11));
    // reversed execution order gives the same samples
    for (std::size_t p = 4; p-- > 0;)
        CHECK(runner.run_exit_pass(c, 0, p, 11) == batch[p]);
}

TEST_CASE("ensemble examples")
{
    PredictionSet one{1, 1, 2, {{{0.3, 0.7}}}};
    CHECK(ensemble(one) == ProbVector{0.3, 0.7});

    PredictionSet two{1, 2, 2, {{{0.8, 0.2}, {0.4, 0.6}}}};
    const auto m = ensemble(two);
    CHECK(m[0] == doctest::Approx(0.6));
    CHECK(m[1] == doctest::Approx(0.4));

    // 2 exits x 2 passes: (0.1+0.5+0.2+0.8)/4 = 0.4
    PredictionSet four{2, 2, 2, {{{0.1, 0.9}, {0.5, 0.5}}, {{0.2, 0.8}, {0.8, 0.2}}}};
    const auto e = ensemble(four);
    CHECK(e[0] == doctest::Approx(0.4));
    CHECK(e[1] == doctest::Approx(0.6));
    // first exit only: (0.1+0.5)/2
    CHECK(ensemble(four, 1)[0] == doctest::Approx(0.3));
    CHECK(exit_mean(four, 2)[0] == doctest::Approx(0.5));
    CHECK_THROWS_AS(ensemble(four, 3), InvalidArgument);
}

TEST_CASE("property: ensemble of identical vectors is that vector and sums to one")
{
    Gen g(103);
    for (int trial = 0; trial < 200; ++trial) {
        const auto p = testsupport::random_probs(g, g.range(2, 10));
        const std::size_t ne = g.range(1, 3), np = g.range(1, 3);
        PredictionSet s{ne, np, p.size(), std::vector<std::vector<ProbVector>>(ne, std::vector<ProbVector>(np, p))};
        const auto e = ensemble(s);
        for (std::size_t i = 0; i < p.size(); ++i)
            CHECK(e[i] == doctest::Approx(p[i]).epsilon(1e-12));
        CHECK(std::accumulate(e.begin(), e.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("predict sample counts and keep_rate 1 behaviour")
{
    const MultiExitSpec me = insert_dropout(place_exits(two_exit_net()), DropoutConfig::mcd(1.0), 1);
    const WeightStore w = init_weights(me, 5);
    const PredictionSet s = predict(me, Tensor::vector({0.3f, -0.4f}), 3, w, 1);
    CHECK(s.n_exit == 2);
    CHECK(s.n_pass == 3);
    CHECK(s.n_sample() == 6);
    for (const auto& exit : s.samples) {
        REQUIRE(exit.size() == 3);
        CHECK(exit[0] == exit[1]);
        CHECK(exit[0] == exit[2]);
        for (const auto& p : exit)
            CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("property: predict has n_pass x n_exit samples")
{
    Gen g(107);
    for (int trial = 0; trial < 60; ++trial) {
        const NetworkSpec net = trial % 3 == 0 ? testsupport::random_conv_net(g) : testsupport::random_dense_net(g);
        const auto kind = trial % 2 ? DropoutKind::mcd : DropoutKind::masksembles;
        const MultiExitSpec me = with_dropout(net, kind);
        const std::size_t n_pass = g.range(1, 2);
        const PredictionSet s =
            predict(me, testsupport::random_tensor(g, net.input_shape), n_pass, init_weights(me, trial), trial);
        CHECK(s.n_sample() == n_pass * me.n_exit());
        std::size_t count = 0;
        for (const auto& e : s.samples)
            count += e.size();
        CHECK(count == n_pass * me.n_exit());
    }
}

TEST_CASE("property: cached predict equals the uncached per-sample oracle")
{
    Gen g(109);
    for (int trial = 0; trial < 30; ++trial) {
        const NetworkSpec net = trial % 2 ? testsupport::random_conv_net(g) : testsupport::random_dense_net(g);
        const auto kind = trial % 4 < 2 ? DropoutKind::mcd : DropoutKind::masksembles;
        // depth 2 sometimes spills dropout into the trunk
        const MultiExitSpec me = with_dropout(net, kind, trial % 3 == 0 ? 2 : 1);
        const BayesianRunner runner(me, init_weights(me, trial));
        const Tensor x = testsupport::random_tensor(g, net.input_shape);
        const std::size_t n_pass = kind == DropoutKind::mcd ? 3 : 2;
        const PredictionSet s = runner.predict(x, n_pass, trial);
        for (std::size_t k = 0; k < me.n_exit(); ++k)
            for (std::size_t p = 0; p < n_pass; ++p)
                CHECK(s.samples[k][p] == runner.run_uncached_sample(x, k, p, trial));
    }
}

TEST_CASE("confidence_exit with hand-set exit heads")
{
    const MultiExitSpec me = insert_dropout(place_exits(two_exit_net()), DropoutConfig::mcd(0.75), 1);
    REQUIRE(me.n_exit() == 2);
    WeightStore w = init_weights(me, 1);
    set_constant_head(w, "exit1_fc", 2, {0.7, 0.3});
    set_constant_head(w, "out", 4, {0.9, 0.1});
    const Tensor x = Tensor::vector({1.0f, -1.0f});

    const ExitDecision a = confidence_exit(me, x, 0.6, ExitMode::per_exit, w, 2, 0);
    CHECK(a.exit_taken == 1);
    CHECK(a.confidence == doctest::Approx(0.7).epsilon(1e-6));
    CHECK(a.confidence == *std::max_element(a.probs.begin(), a.probs.end()));
    const ExitDecision b = confidence_exit(me, x, 0.8, ExitMode::per_exit, w, 2, 0);
    CHECK(b.exit_taken == 2);
    CHECK(b.confidence == doctest::Approx(0.9).epsilon(1e-6));
    // ensemble of both exits: (0.7 + 0.9) / 2 = 0.8
    const ExitDecision c = confidence_exit(me, x, 0.75, ExitMode::ensemble_so_far, w, 2, 0);
    CHECK(c.exit_taken == 2);
    CHECK(c.confidence == doctest::Approx(0.8).epsilon(1e-6));

    CHECK(confidence_exit(me, x, 0.9999, ExitMode::per_exit, w, 2, 0).exit_taken == 2);
    CHECK_THROWS_AS(confidence_exit(me, x, 0.0, ExitMode::per_exit, w, 2, 0), InvalidArgument);
    CHECK_THROWS_AS(confidence_exit(me, x, 1.0, ExitMode::per_exit, w, 2, 0), InvalidArgument);
}

TEST_CASE("property: confidence_exit is monotone in the threshold")
{
    const std::vector<double> grid{0.1, 0.15, 0.25, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999};
    Gen g(113);
    for (int trial = 0; trial < 30; ++trial) {
        const NetworkSpec net = testsupport::random_dense_net(g, 3, 3);
        const MultiExitSpec me = with_dropout(net, trial % 2 ? DropoutKind::mcd : DropoutKind::masksembles);
        const BayesianRunner runner(me, init_weights(me, trial));
        const Tensor x = testsupport::random_tensor(g, net.input_shape, -3, 3);
        for (auto mode : {ExitMode::per_exit, ExitMode::ensemble_so_far}) {
            int prev = 0;
            for (double t : grid) {
                const ExitDecision d = runner.confidence_exit(x, t, mode, 2, trial);
                CHECK(d.exit_taken >= prev);
                CHECK(d.exit_taken >= 1);
                CHECK(d.exit_taken <= static_cast<int>(me.n_exit()));
                prev = d.exit_taken;
            }
            // below 1/class_count the first exit always qualifies
            CHECK(runner.confidence_exit(x, 0.3, mode, 2, trial).exit_taken == 1);
        }
    }
}

TEST_CASE("prediction set export carries dims and reproducibility metadata")
{
    const DropoutConfig cfg = DropoutConfig::mcd(0.75);
    const MultiExitSpec me = insert_dropout(place_exits(two_exit_net()), cfg, 1);
    const PredictionSet s = predict(me, Tensor::vector({0.1f, 0.2f}), 2, init_weights(me, 1), 3);
    const auto j = prediction_set_to_json(s, 3, &cfg);
    CHECK(j.at("n_exit") == 2);
    CHECK(j.at("n_pass") == 2);
    CHECK(j.at("class_count") == 2);
    CHECK(j.at("seed") == 3);
    CHECK(j.at("dropout_hash") == cfg.hash());
    CHECK(j.at("probs").size() == 8);
}
