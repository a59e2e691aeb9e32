#include "mebnn/dataset.hpp"

#include "mebnn/error.hpp"
#include "mebnn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace mebnn {

void Dataset::add(Tensor x, int label)
{
    if (inputs.empty() && feature_shape.empty())
        feature_shape = x.shape();
    if (x.shape() != feature_shape)
        throw ShapeError("dataset sample shape " + shape_to_string(x.shape()) + " != " + shape_to_string(feature_shape));
    inputs.push_back(std::move(x));
    labels.push_back(label);
}

void Dataset::validate() const
{
    if (inputs.empty())
        throw InvalidArgument("dataset is empty");
    if (labels.size() != inputs.size())
        throw InvalidArgument("dataset has " + std::to_string(inputs.size()) + " inputs but "
                              + std::to_string(labels.size()) + " labels");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= class_count)
            throw InvalidArgument("label " + std::to_string(y) + " outside [0, " + std::to_string(class_count) + ")");
}

Dataset make_blobs(std::size_t per_class, std::size_t classes, double radius, double spread, std::uint64_t seed)
{
    Dataset d;
    d.class_count = classes;
    d.feature_shape = {2};
    RngStream rng(seed, 0, "blobs");
    for (std::size_t c = 0; c < classes; ++c) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
        const double cx = radius * std::cos(angle);
        const double cy = radius * std::sin(angle);
        for (std::size_t i = 0; i < per_class; ++i) {
            const double x = cx + spread * rng.next_normal();
            const double y = cy + spread * rng.next_normal();
            d.add(Tensor({2}, {static_cast<float>(x), static_cast<float>(y)}), static_cast<int>(c));
        }
    }
    return d;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double train_fraction, std::uint64_t seed)
{
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    RngStream rng(seed, 0, "split");
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_below(i)]);

    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(data.size())));
    Dataset train, test;
    train.class_count = test.class_count = data.class_count;
    train.feature_shape = test.feature_shape = data.feature_shape;
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto& dst = i < n_train ? train : test;
        dst.inputs.push_back(data.inputs[order[i]]);
        dst.labels.push_back(data.labels[order[i]]);
    }
    return {std::move(train), std::move(test)};
}

void save_csv(const Dataset& data, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write '" + path + "'");
    const std::size_t F = shape_numel(data.feature_shape);
    for (std::size_t f = 0; f < F; ++f)
        out << "f" << f << ",";
    out << "label\n";
    char buf[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (float v : data.inputs[i].data()) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
            out << buf << ",";
        }
        out << data.labels[i] << "\n";
    }
}

Dataset load_csv(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line))
        throw ParseError("'" + path + "' is empty");
    const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (columns < 2)
        throw ParseError("'" + path + "' needs at least one feature column and a label column");

    Dataset d;
    d.feature_shape = {columns - 1};
    int max_label = -1;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<float> values;
        int label = -1;
        for (std::size_t c = 0; c < columns; ++c) {
            if (!std::getline(ss, cell, ','))
                throw ParseError("'" + path + "' row " + std::to_string(row) + " has too few columns");
            try {
                if (c + 1 < columns)
                    values.push_back(std::stof(cell));
                else
                    label = std::stoi(cell);
            } catch (const std::exception&) {
                throw ParseError("'" + path + "' row " + std::to_string(row) + ": bad number '" + cell + "'");
            }
        }
        if (label < 0)
            throw ParseError("'" + path + "' row " + std::to_string(row) + ": negative label");
        max_label = std::max(max_label, label);
        d.add(Tensor(d.feature_shape, std::move(values)), label);
    }
    d.class_count = static_cast<std::size_t>(max_label + 1);
    d.validate();
    return d;
}

NoiseSpec noise_like(const Dataset& data, std::size_t count, std::uint64_t seed)
{
    data.validate();
    const std::size_t F = shape_numel(data.feature_shape);
    NoiseSpec spec;
    spec.mean.assign(F, 0.0);
    spec.stddev.assign(F, 0.0);
    spec.count = count;
    spec.seed = seed;
    const double n = static_cast<double>(data.size());
    for (const auto& x : data.inputs)
        for (std::size_t f = 0; f < F; ++f)
            spec.mean[f] += x[f] / n;
    for (const auto& x : data.inputs)
        for (std::size_t f = 0; f < F; ++f)
            spec.stddev[f] += (x[f] - spec.mean[f]) * (x[f] - spec.mean[f]) / n;
    for (auto& s : spec.stddev)
        s = std::sqrt(s);
    return spec;
}

std::vector<Tensor> gaussian_noise(const Shape& feature_shape, const NoiseSpec& spec)
{
    const std::size_t F = shape_numel(feature_shape);
    if (spec.mean.size() != F || spec.stddev.size() != F)
        throw ShapeError("noise spec has " + std::to_string(spec.mean.size()) + " features, inputs need "
                         + std::to_string(F));
    std::vector<Tensor> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        RngStream rng(spec.seed, i, "gaussian_noise");
        Tensor t(feature_shape);
        for (std::size_t f = 0; f < F; ++f)
            t[f] = static_cast<float>(spec.mean[f] + spec.stddev[f] * rng.next_normal());
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace mebnn
