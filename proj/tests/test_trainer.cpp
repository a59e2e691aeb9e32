#include "doctest.h"
#include "support.hpp"

#include "mebnn/error.hpp"
#include "mebnn/inference.hpp"
#include "mebnn/metrics.hpp"
#include "mebnn/trainer.hpp"

#include <cmath>

using namespace mebnn;
using testsupport::Gen;

namespace {

// Norm-wise relative error between the analytic gradient and central
// differences of the loss, over every parameter.
double gradient_relative_error(const MultiExitSpec& me, std::uint64_t seed)
{
    Gen g(seed, "gradcheck");
    ToyTrainer t(me, init_weights(me, seed));
    // perturb biases away from zero so no relu sits exactly on its kink
    for (auto& p : t.params())
        p += g.uniform(-0.05, 0.05);
    std::vector<Tensor> xs;
    std::vector<int> ys;
    for (int i = 0; i < 6; ++i) {
        xs.push_back(testsupport::random_tensor(g, me.trunk.input_shape, -2.0, 2.0));
        ys.push_back(static_cast<int>(g.range(0, me.class_count() - 1)));
    }
    std::vector<double> grad;
    t.loss_and_gradient(xs, ys, seed, 0, grad);
    REQUIRE(grad.size() == t.params().size());

    const double h = 1e-6;
    double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double saved = t.params()[i];
        t.params()[i] = saved + h;
        const double up = t.loss(xs, ys, seed, 0);
        t.params()[i] = saved - h;
        const double down = t.loss(xs, ys, seed, 0);
        t.params()[i] = saved;
        const double numeric = (up - down) / (2 * h);
        diff += (numeric - grad[i]) * (numeric - grad[i]);
        norm_a += grad[i] * grad[i];
        norm_n += numeric * numeric;
    }
    return std::sqrt(diff) / (std::sqrt(norm_a) + std::sqrt(norm_n));
}

}  // namespace

TEST_CASE("property: analytic gradients match central differences")
{
    Gen g(61);
    for (std::uint64_t s = 0; s < 5; ++s) {
        MultiExitSpec me = place_exits(testsupport::random_dense_net(g));
        if (s % 2 == 0)
            me = insert_dropout(me, DropoutConfig::mcd(0.75), 1);
        else
            me = insert_dropout(me, DropoutConfig::masksembles(2, 1.5), 1);
        CAPTURE(s);
        CHECK(gradient_relative_error(me, s + 1) <= 1e-4);
    }
}

TEST_CASE("train_toy with lr=0 returns the initialization")
{
    Gen g(67);
    const MultiExitSpec me = place_exits(testsupport::random_dense_net(g, 2, 2, 2));
    const Dataset data = make_blobs(20, 2, 3.0, 0.5, 1);
    TrainHyperParams hp;
    hp.lr = 0.0;
    hp.epochs = 5;
    hp.seed = 9;
    CHECK(train_toy(me, data, hp) == init_weights(me, 9));
}

TEST_CASE("train_toy is deterministic per seed")
{
    Gen g(71);
    const MultiExitSpec me = insert_dropout(place_exits(testsupport::random_dense_net(g, 2, 3, 2)),
                                            DropoutConfig::mcd(0.75), 1);
    const Dataset data = make_blobs(20, 3, 3.0, 0.5, 2);
    TrainHyperParams hp;
    hp.epochs = 5;
    hp.seed = 4;
    CHECK(train_toy(me, data, hp) == train_toy(me, data, hp));
    hp.seed = 5;
    const auto other = train_toy(me, data, hp);
    hp.seed = 4;
    CHECK_FALSE(train_toy(me, data, hp) == other);
}

TEST_CASE("train_toy fits separable blobs with a 2-8-2 MLP")
{
    NetworkSpec net;
    net.input_shape = {2};
    net.layers = {LayerSpec::dense("fc1", 2, 8), LayerSpec::simple("relu", LayerKind::relu),
                  LayerSpec::dense("out", 8, 2), LayerSpec::simple("softmax", LayerKind::softmax)};
    const MultiExitSpec me = place_exits(net);
    const Dataset data = make_blobs(100, 2, 3.0, 0.5, 3);
    TrainHyperParams hp;
    hp.epochs = 200;
    hp.seed = 1;
    const WeightStore w = train_toy(me, data, hp);
    const BayesianRunner runner(me, w);
    std::vector<ProbVector> probs;
    for (const auto& x : data.inputs)
        probs.push_back(ensemble(runner.predict(x, 1, 0)));
    CHECK(accuracy(probs, data.labels) >= 0.95);
}

TEST_CASE("train_toy rejects convolutional layers")
{
    Gen g(73);
    const NetworkSpec net = testsupport::random_conv_net(g);
    const MultiExitSpec me = place_exits(net);
    Dataset data;
    data.feature_shape = net.input_shape;
    data.class_count = 3;
    for (int i = 0; i < 6; ++i)
        data.add(testsupport::random_tensor(g, net.input_shape), i % 3);
    CHECK_THROWS_AS(train_toy(me, data, TrainHyperParams{}), InvalidArgument);
}

TEST_CASE("training lowers the loss")
{
    Gen g(79);
    const MultiExitSpec me = insert_dropout(place_exits(testsupport::random_dense_net(g, 3, 3, 2)),
                                            DropoutConfig::mcd(0.875), 1);
    const Dataset data = make_blobs(40, 3, 3.0, 0.7, 5);
    TrainHyperParams hp;
    hp.epochs = 60;
    hp.seed = 2;
    const ToyTrainer before(me, init_weights(me, 2));
    const ToyTrainer after(me, train_toy(me, data, hp));
    CHECK(after.loss(data.inputs, data.labels, 0, 0) < before.loss(data.inputs, data.labels, 0, 0));
}
