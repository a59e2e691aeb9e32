#pragma once

// Helpers shared by the test binaries: hand-rolled random generators for
// networks and probability vectors, plus small independent oracles.

#include "mebnn/dataset.hpp"
#include "mebnn/dropout.hpp"
#include "mebnn/netspec.hpp"
#include "mebnn/rng.hpp"
#include "mebnn/weights.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace testsupport {

using namespace mebnn;

// Small wrapper around the library's counter-based stream, used only to drive
// test-case generation.
class Gen {
public:
    explicit Gen(std::uint64_t seed, std::string_view tag = "testgen") : rng_(seed, 0, tag) {}
    std::size_t range(std::size_t lo, std::size_t hi) { return lo + rng_.next_below(hi - lo + 1); }
    double uniform(double lo = 0.0, double hi = 1.0) { return lo + (hi - lo) * rng_.next_uniform(); }
    bool coin() { return rng_.next_below(2) == 1; }

private:
    RngStream rng_;
};

// Random dense chain on a rank-1 input: blocks of dense+relu, some followed by
// a window-2 pool, ending with dense+softmax.
inline NetworkSpec random_dense_net(Gen& g, std::size_t max_blocks = 3, std::size_t classes = 3,
                                    std::size_t input_width = 0)
{
    NetworkSpec net;
    std::size_t width = input_width ? input_width : g.range(2, 5);
    net.input_shape = {width};
    const std::size_t blocks = g.range(1, max_blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t out = 2 * g.range(3, 8);
        const std::string tag = std::to_string(b);
        net.layers.push_back(LayerSpec::dense("fc" + tag, width, out));
        net.layers.push_back(LayerSpec::simple("relu" + tag, LayerKind::relu));
        width = out;
        if (g.coin()) {
            const auto kind = g.coin() ? LayerKind::max_pool : LayerKind::avg_pool;
            net.layers.push_back(LayerSpec::pool("pool" + tag, kind, 2, 2));
            width /= 2;
        }
    }
    net.layers.push_back(LayerSpec::dense("out", width, classes));
    net.layers.push_back(LayerSpec::simple("softmax", LayerKind::softmax));
    return net;
}

// Random small conv net: conv+relu+pool blocks on a (C, 8, 8) input, then a
// dense classifier.
inline NetworkSpec random_conv_net(Gen& g, std::size_t classes = 3)
{
    NetworkSpec net;
    std::size_t ch = g.range(2, 3);
    std::size_t hw = 8;
    net.input_shape = {ch, hw, hw};
    const std::size_t blocks = g.range(1, 2);
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t out = g.range(4, 6);
        const std::string tag = std::to_string(b);
        net.layers.push_back(LayerSpec::conv2d("conv" + tag, {ch, out, 3, 3, 1, 1}));
        net.layers.push_back(LayerSpec::simple("relu" + tag, LayerKind::relu));
        net.layers.push_back(LayerSpec::pool("pool" + tag, g.coin() ? LayerKind::max_pool : LayerKind::avg_pool, 2, 2));
        ch = out;
        hw /= 2;
    }
    net.layers.push_back(LayerSpec::simple("flat", LayerKind::flatten));
    net.layers.push_back(LayerSpec::dense("fc", ch * hw * hw, 8));
    net.layers.push_back(LayerSpec::simple("relu_fc", LayerKind::relu));
    net.layers.push_back(LayerSpec::dense("out", 8, classes));
    net.layers.push_back(LayerSpec::simple("softmax", LayerKind::softmax));
    return net;
}

inline Tensor random_tensor(Gen& g, const Shape& shape, double lo = -1.0, double hi = 1.0)
{
    Tensor t(shape);
    for (auto& v : t.data())
        v = static_cast<float>(g.uniform(lo, hi));
    return t;
}

inline std::vector<double> random_probs(Gen& g, std::size_t n)
{
    std::vector<double> p(n);
    double sum = 0.0;
    for (auto& v : p) {
        v = g.uniform(0.0, 1.0);
        v = v * v * v;  // skew towards peaked vectors
        sum += v;
    }
    for (auto& v : p)
        v /= sum;
    return p;
}

// Independent dense oracle in double: y = W x + b.
inline std::vector<double> dense_oracle(const Tensor& w, const Tensor& b, const std::vector<double>& x)
{
    const std::size_t out = w.shape()[0], in = w.shape()[1];
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < in; ++i)
            acc += static_cast<double>(w[o * in + i]) * x[i];
        y[o] = acc;
    }
    return y;
}

// Per-test scratch directory under the system temp dir, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("mebnn_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace testsupport
