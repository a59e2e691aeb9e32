#include "doctest.h"
#include "support.hpp"

#include "mebnn/error.hpp"
#include "mebnn/netspec.hpp"

#include <algorithm>

using namespace mebnn;
using testsupport::Gen;

namespace {

const char* small_doc = R"({
  "input_shape": [4],
  "layers": [
    {"id": "fc1", "kind": "dense", "params": {"in_features": 4, "out_features": 3}},
    {"id": "relu", "kind": "relu"},
    {"id": "fc2", "kind": "dense", "params": {"in_features": 3, "out_features": 2}},
    {"id": "softmax", "kind": "softmax"}
  ]
})";

// fc1, relu1, pool1, fc2, out, softmax
NetworkSpec six_layer_net()
{
    NetworkSpec net;
    net.input_shape = {4};
    net.layers = {LayerSpec::dense("fc1", 4, 8),          LayerSpec::simple("relu1", LayerKind::relu),
                  LayerSpec::pool("pool1", LayerKind::max_pool, 2, 2), LayerSpec::dense("fc2", 4, 6),
                  LayerSpec::dense("out", 6, 3),         LayerSpec::simple("softmax", LayerKind::softmax)};
    return net;
}

NetworkSpec two_pool_net()
{
    NetworkSpec net;
    net.input_shape = {2};
    net.layers = {LayerSpec::dense("fc1", 2, 16),      LayerSpec::simple("relu1", LayerKind::relu),
                  LayerSpec::pool("pool1", LayerKind::max_pool, 2, 2), LayerSpec::dense("fc2", 8, 8),
                  LayerSpec::simple("relu2", LayerKind::relu), LayerSpec::pool("pool2", LayerKind::avg_pool, 2, 2),
                  LayerSpec::dense("fc3", 4, 4),       LayerSpec::simple("relu3", LayerKind::relu),
                  LayerSpec::dense("out", 4, 3),       LayerSpec::simple("softmax", LayerKind::softmax)};
    return net;
}

NetworkSpec vgg11_like()
{
    NetworkSpec net;
    net.input_shape = {3, 32, 32};
    std::size_t ch = 3;
    int conv = 0, pool = 0;
    auto add_conv = [&](std::size_t out) {
        const std::string id = "conv" + std::to_string(++conv);
        net.layers.push_back(LayerSpec::conv2d(id, {ch, out, 3, 3, 1, 1}));
        net.layers.push_back(LayerSpec::simple(id + "_relu", LayerKind::relu));
        ch = out;
    };
    auto add_pool = [&] {
        net.layers.push_back(LayerSpec::pool("pool" + std::to_string(++pool), LayerKind::max_pool, 2, 2));
    };
    // VGG-11 configuration A with channel counts divided by 16
    add_conv(4), add_pool();
    add_conv(8), add_pool();
    add_conv(16), add_conv(16), add_pool();
    add_conv(32), add_conv(32), add_pool();
    add_conv(32), add_conv(32), add_pool();
    net.layers.push_back(LayerSpec::dense("fc1", 32, 64));
    net.layers.push_back(LayerSpec::simple("fc1_relu", LayerKind::relu));
    net.layers.push_back(LayerSpec::dense("fc2", 64, 64));
    net.layers.push_back(LayerSpec::simple("fc2_relu", LayerKind::relu));
    net.layers.push_back(LayerSpec::dense("fc3", 64, 10));
    net.layers.push_back(LayerSpec::simple("softmax", LayerKind::softmax));
    return net;
}

std::size_t count_kind(const MultiExitSpec& me, LayerKind kind)
{
    std::size_t n = 0;
    for (const auto& ref : me.all_layers())
        n += ref.layer->kind == kind;
    return n;
}

}  // namespace

TEST_CASE("load_network small dense doc")
{
    const NetworkSpec net = load_network(small_doc);
    CHECK(net.layers.size() == 4);
    CHECK(net.input_shape == Shape{4});
    CHECK(net.class_count() == 2);
    CHECK(load_network(small_doc) == net);
}

TEST_CASE("load_network shape mismatch names both layers")
{
    std::string doc = small_doc;
    doc.replace(doc.find("\"in_features\": 3"), 16, "\"in_features\": 5");
    try {
        load_network(doc);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("'relu'") != std::string::npos);
        CHECK(msg.find("'fc2'") != std::string::npos);
    }
}

TEST_CASE("load_network rejects malformed documents")
{
    CHECK_THROWS_AS(load_network("{ not json"), ParseError);
    CHECK_THROWS_AS(load_network(R"({"input_shape": [4], "layers": [], "extra": 1})"), ParseError);
    std::string dup = small_doc;
    dup.replace(dup.find("\"id\": \"relu\""), 12, "\"id\": \"fc1\" ");
    CHECK_THROWS_AS(load_network(dup), ParseError);
    std::string unknown_param = small_doc;
    unknown_param.replace(unknown_param.find("\"out_features\": 2"), 17, "\"out_features\": 2, \"bias\": 0");
    CHECK_THROWS_AS(load_network(unknown_param), ParseError);
}

TEST_CASE("load_network LeNet-like doc has 10 layers")
{
    const NetworkSpec net = load_network_file(std::string(MEBNN_DATA_DIR) + "/lenet_like.json");
    CHECK(net.layers.size() == 10);
    CHECK(net.class_count() == 10);
    CHECK(net.layer_output_shapes()[3] == Shape{16, 5, 5});
}

TEST_CASE("property: load_network after serialize is the identity")
{
    Gen g(101);
    for (int trial = 0; trial < 100; ++trial) {
        const NetworkSpec net = trial % 2 ? testsupport::random_dense_net(g) : testsupport::random_conv_net(g);
        CHECK(load_network(serialize_network(net)) == net);
    }
}

TEST_CASE("place_exits counts")
{
    CHECK(place_exits(two_pool_net()).n_exit() == 3);
    CHECK(place_exits(vgg11_like()).n_exit() == 6);

    NetworkSpec flat;
    flat.input_shape = {4};
    flat.layers = {LayerSpec::dense("fc", 4, 3), LayerSpec::simple("softmax", LayerKind::softmax)};
    const MultiExitSpec one = place_exits(flat);
    REQUIRE(one.n_exit() == 1);
    CHECK(one.exits[0].head_layers == flat.layers);
}

TEST_CASE("place_exits builds default heads on conv blocks")
{
    const MultiExitSpec me = place_exits(load_network_file(std::string(MEBNN_DATA_DIR) + "/lenet_like.json"));
    REQUIRE(me.n_exit() == 3);
    CHECK(me.exits[0].attach_after == "pool1");
    CHECK(me.exits[1].attach_after == "pool2");
    const auto& head = me.exits[0].head_layers;
    REQUIRE(head.size() == 3);
    CHECK(head[0].kind == LayerKind::avg_pool);
    CHECK(head[1].dense() == DenseParams{6, 10});
    CHECK(head[2].kind == LayerKind::softmax);
    CHECK(validate(me).empty());
}

TEST_CASE("property: place_exits attach depths strictly increase")
{
    Gen g(103);
    for (int trial = 0; trial < 100; ++trial) {
        const NetworkSpec net = trial % 2 ? testsupport::random_dense_net(g) : testsupport::random_conv_net(g);
        const MultiExitSpec me = place_exits(net);
        CHECK(validate(me).empty());
        for (std::size_t k = 0; k + 1 < me.n_exit(); ++k) {
            CHECK(me.attach_index(k) < me.attach_index(k + 1));
            CHECK(me.exits[k].exit_index == static_cast<int>(k + 1));
        }
        CHECK(place_exits(net) == me);
    }
}

TEST_CASE("insert_dropout depth 1 puts one site in every head")
{
    const MultiExitSpec me = insert_dropout(place_exits(two_pool_net()), DropoutConfig::mcd(0.75), 1);
    CHECK(me.dropout_sites.size() == 3);
    CHECK(count_kind(me, LayerKind::dropout_point) == 3);
    for (const auto& s : me.dropout_sites)
        CHECK(s.segment == Segment::head);
    CHECK(me.partial_dropout);
    CHECK(validate(me).empty());
    // idempotent for fixed (cfg, depth)
    CHECK(insert_dropout(me, DropoutConfig::mcd(0.75), 1) == me);
}

TEST_CASE("insert_dropout depth 0 and excessive depth are rejected")
{
    const MultiExitSpec me = place_exits(two_pool_net());
    CHECK_THROWS_AS(insert_dropout(me, DropoutConfig::mcd(0.75), 0), InvalidArgument);
    // deepest path has fc1, fc2, fc3, out
    CHECK_NOTHROW(insert_dropout(me, DropoutConfig::mcd(0.75), 4));
    CHECK_THROWS_AS(insert_dropout(me, DropoutConfig::mcd(0.75), 5), InvalidArgument);
}

TEST_CASE("insert_dropout depth 2 spills into the trunk feeding exit 1")
{
    // exit 1 head: [exit1_fc, exit1_softmax]; its second site is the trunk's fc1
    const MultiExitSpec base = place_exits(six_layer_net());
    REQUIRE(base.n_exit() == 2);
    const MultiExitSpec me = insert_dropout(base, DropoutConfig::mcd(0.75), 2);
    std::vector<std::string> trunk_ids;
    for (const auto& l : me.trunk.layers)
        trunk_ids.push_back(l.id);
    CHECK(trunk_ids == std::vector<std::string>{"drop_fc1", "fc1", "relu1", "pool1", "drop_fc2", "fc2"});
    CHECK(me.exits[0].head_layers.front().id == "drop_exit1_fc");
    CHECK(me.exits[1].head_layers.front().id == "drop_out");
    // exit 2's own sites are its head and fc2; the spill belongs to exit 1
    std::vector<std::pair<int, std::string>> sites;
    for (const auto& s : me.dropout_sites)
        sites.emplace_back(s.exit_index, s.layer_id);
    CHECK(std::count(sites.begin(), sites.end(), std::pair<int, std::string>{1, "drop_fc1"}) == 1);
    CHECK(std::count(sites.begin(), sites.end(), std::pair<int, std::string>{2, "drop_fc2"}) == 1);
    CHECK(std::count(sites.begin(), sites.end(), std::pair<int, std::string>{2, "drop_out"}) == 1);
    CHECK_FALSE(me.partial_dropout);
    CHECK(me.bayes_boundary() == 0);
    CHECK(validate(me).empty());
}

TEST_CASE("property: partial dropout holds when depth fits every head")
{
    Gen g(107);
    for (int trial = 0; trial < 100; ++trial) {
        const MultiExitSpec me =
            insert_dropout(place_exits(testsupport::random_dense_net(g)), DropoutConfig::mcd(0.5), 1);
        CHECK(me.partial_dropout);
        const long shallowest = me.attach_index(0);
        for (std::size_t i = 0; i < me.trunk.layers.size(); ++i)
            if (me.trunk.layers[i].kind == LayerKind::dropout_point)
                CHECK(static_cast<long>(i) > shallowest);
        CHECK(validate(me).empty());
    }
}

TEST_CASE("validate diagnostics")
{
    const MultiExitSpec good = place_exits(two_pool_net());
    CHECK(validate(select_exits(good, 2)).empty());

    MultiExitSpec dup = good;
    dup.trunk.layers[1].id = "fc1";
    const auto d1 = validate(dup);
    REQUIRE(d1.size() >= 1);
    CHECK(std::any_of(d1.begin(), d1.end(), [](const Diagnostic& d) { return d.layer_id == "fc1"; }));

    MultiExitSpec spill = insert_dropout(place_exits(six_layer_net()), DropoutConfig::mcd(0.75), 2);
    spill.partial_dropout = true;
    const auto d2 = validate(spill);
    REQUIRE(d2.size() == 1);
    CHECK(d2[0].layer_id == "drop_fc1");
}

TEST_CASE("multi-exit round trip through structured text")
{
    Gen g(109);
    for (int trial = 0; trial < 30; ++trial) {
        MultiExitSpec me = place_exits(trial % 2 ? testsupport::random_dense_net(g) : testsupport::random_conv_net(g));
        if (trial % 3 == 0)
            me = insert_dropout(me, DropoutConfig::mcd(0.625, Granularity::channel, 4), 1);
        else if (trial % 3 == 1)
            me = insert_dropout(me, DropoutConfig::masksembles(2, 1.5), 1);
        CHECK(load_multi_exit(serialize_multi_exit(me)) == me);
    }
    CHECK_THROWS_AS(load_network(serialize_multi_exit(place_exits(two_pool_net()))), ParseError);
}

TEST_CASE("select_exits keeps the deepest exits")
{
    const MultiExitSpec me = select_exits(place_exits(two_pool_net()), 2);
    REQUIRE(me.n_exit() == 2);
    CHECK(me.exits[0].attach_after == "pool2");
    CHECK(me.exits[0].exit_index == 1);
    CHECK(me.exits[1].exit_index == 2);
    CHECK_THROWS_AS(select_exits(me, 3), InvalidArgument);
    CHECK_THROWS_AS(select_exits(me, 0), InvalidArgument);
}

TEST_CASE("scale_channels halves hidden widths and keeps the classifier")
{
    const NetworkSpec half = scale_channels(two_pool_net(), 0.5);
    CHECK(half.layers[0].dense() == DenseParams{2, 8});
    CHECK(half.layers[3].dense() == DenseParams{4, 4});
    CHECK(half.layers[8].dense().out_features == 3);
    CHECK(validate(half).empty());
    CHECK_THROWS_AS(scale_channels(two_pool_net(), 1.0 / 32), InvalidArgument);
    CHECK_THROWS_AS(scale_channels(two_pool_net(), 0.0), InvalidArgument);
}

TEST_CASE("strip_dropout undoes insert_dropout")
{
    const MultiExitSpec base = place_exits(six_layer_net());
    CHECK(strip_dropout(insert_dropout(base, DropoutConfig::mcd(0.75), 2)) == base);
}
