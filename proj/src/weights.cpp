#include "mebnn/weights.hpp"

#include "mebnn/error.hpp"
#include "mebnn/rng.hpp"

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mebnn {

namespace fs = std::filesystem;
using nlohmann::json;

void WeightStore::set(const std::string& layer_id, const std::string& name, Tensor t)
{
    layers_[layer_id][name] = std::move(t);
}

const Tensor& WeightStore::get(const std::string& layer_id, const std::string& name) const
{
    auto it = layers_.find(layer_id);
    if (it == layers_.end())
        throw InvalidArgument("missing weights for layer '" + layer_id + "'");
    auto jt = it->second.find(name);
    if (jt == it->second.end())
        throw InvalidArgument("missing tensor '" + name + "' for layer '" + layer_id + "'");
    return jt->second;
}

bool WeightStore::contains(const std::string& layer_id) const
{
    return layers_.count(layer_id) > 0;
}

std::pair<Shape, Shape> parameter_shapes(const LayerSpec& layer)
{
    if (layer.kind == LayerKind::dense) {
        const auto& p = layer.dense();
        return {{p.out_features, p.in_features}, {p.out_features}};
    }
    if (layer.kind == LayerKind::conv2d) {
        const auto& p = layer.conv();
        return {{p.out_channels, p.in_channels, p.kernel_h, p.kernel_w}, {p.out_channels}};
    }
    throw InvalidArgument("layer '" + layer.id + "' has no parameters");
}

WeightStore init_weights(const MultiExitSpec& me, std::uint64_t seed)
{
    WeightStore store;
    for (const auto& ref : me.all_layers()) {
        const auto& l = *ref.layer;
        if (!is_learnable(l.kind))
            continue;
        auto [wshape, bshape] = parameter_shapes(l);
        double fan_in, fan_out;
        if (l.kind == LayerKind::dense) {
            fan_in = static_cast<double>(wshape[1]);
            fan_out = static_cast<double>(wshape[0]);
        } else {
            const double area = static_cast<double>(wshape[2] * wshape[3]);
            fan_in = static_cast<double>(wshape[1]) * area;
            fan_out = static_cast<double>(wshape[0]) * area;
        }
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        RngStream rng(seed, 0, l.id);
        Tensor w(wshape);
        for (auto& v : w.data())
            v = static_cast<float>((2.0 * rng.next_uniform() - 1.0) * limit);
        store.set(l.id, "weight", std::move(w));
        store.set(l.id, "bias", Tensor(bshape, 0.0f));
    }
    return store;
}

void check_weights(const WeightStore& store, const MultiExitSpec& me)
{
    for (const auto& ref : me.all_layers()) {
        const auto& l = *ref.layer;
        if (!is_learnable(l.kind))
            continue;
        auto [wshape, bshape] = parameter_shapes(l);
        const auto& w = store.get(l.id, "weight");
        const auto& b = store.get(l.id, "bias");
        if (w.shape() != wshape || b.shape() != bshape)
            throw ShapeError("weights for layer '" + l.id + "' have shapes " + shape_to_string(w.shape()) + "/"
                             + shape_to_string(b.shape()) + ", expected " + shape_to_string(wshape) + "/"
                             + shape_to_string(bshape));
    }
}

WeightStore quantize_weights(const WeightStore& store, const QFormat& q)
{
    WeightStore out;
    for (const auto& [layer, tensors] : store.layers())
        for (const auto& [name, t] : tensors)
            out.set(layer, name, quantize(t, q));
    return out;
}

WeightStore slice_weights(const WeightStore& full, const MultiExitSpec& target)
{
    WeightStore out;
    for (const auto& ref : target.all_layers()) {
        const auto& l = *ref.layer;
        if (!is_learnable(l.kind))
            continue;
        auto [wshape, bshape] = parameter_shapes(l);
        for (const auto& [name, want] : {std::pair{"weight", wshape}, std::pair{"bias", bshape}}) {
            const Tensor& src = full.get(l.id, name);
            if (src.rank() != want.size())
                throw ShapeError("slice_weights: rank mismatch for '" + l.id + "'");
            for (std::size_t d = 0; d < want.size(); ++d)
                if (want[d] > src.shape()[d])
                    throw ShapeError("slice_weights: layer '" + l.id + "' needs " + shape_to_string(want)
                                     + " but source is " + shape_to_string(src.shape()));
            Tensor dst(want);
            const auto& ss = src.shape();
            // row-major strides of the source
            std::vector<std::size_t> stride(ss.size(), 1);
            for (std::size_t d = ss.size() - 1; d-- > 0;)
                stride[d] = stride[d + 1] * ss[d + 1];
            std::vector<std::size_t> idx(want.size(), 0);
            for (std::size_t flat = 0; flat < dst.numel(); ++flat) {
                std::size_t off = 0;
                for (std::size_t d = 0; d < idx.size(); ++d)
                    off += idx[d] * stride[d];
                dst[flat] = src[off];
                for (std::size_t d = idx.size(); d-- > 0;) {
                    if (++idx[d] < want[d])
                        break;
                    idx[d] = 0;
                }
            }
            out.set(l.id, name, std::move(dst));
        }
    }
    return out;
}

namespace {

void put_f32le(std::string& blob, float v)
{
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i)
        blob.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_f32le(const unsigned char* p)
{
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i)
        bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

}  // namespace

void save_weights(const WeightStore& store, const std::string& manifest_path, const std::string& blob_name)
{
    const fs::path manifest(manifest_path);
    std::string blob_file = blob_name;
    if (blob_file.empty())
        blob_file = manifest.stem().string() + ".bin";

    std::string blob;
    auto tensors = json::array();
    for (const auto& [layer, named] : store.layers()) {
        for (const auto& [name, t] : named) {
            const std::size_t offset = blob.size();
            for (float v : t.data())
                put_f32le(blob, v);
            tensors.push_back({{"layer_id", layer},
                               {"tensor_name", name},
                               {"shape", t.shape()},
                               {"dtype", "f32le"},
                               {"offset", offset},
                               {"length", blob.size() - offset}});
        }
    }
    json doc = {{"blob", blob_file}, {"tensors", tensors}};

    std::ofstream mf(manifest, std::ios::binary);
    if (!mf)
        throw IoError("cannot write '" + manifest.string() + "'");
    mf << doc.dump(2) << "\n";
    const fs::path blob_path = manifest.parent_path() / blob_file;
    std::ofstream bf(blob_path, std::ios::binary);
    if (!bf)
        throw IoError("cannot write '" + blob_path.string() + "'");
    bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

WeightStore load_weights(const std::string& manifest_path)
{
    std::ifstream mf(manifest_path, std::ios::binary);
    if (!mf)
        throw IoError("cannot open '" + manifest_path + "'");
    json doc;
    try {
        doc = json::parse(mf);
    } catch (const json::parse_error& e) {
        throw ParseError("malformed weights manifest '" + manifest_path + "': " + e.what());
    }
    if (!doc.is_object() || !doc.contains("blob") || !doc.contains("tensors") || doc.size() != 2)
        throw ParseError("weights manifest must have exactly the keys 'blob' and 'tensors'");

    const fs::path blob_path = fs::path(manifest_path).parent_path() / doc.at("blob").get<std::string>();
    std::ifstream bf(blob_path, std::ios::binary);
    if (!bf)
        throw IoError("cannot open weights blob '" + blob_path.string() + "'");
    std::stringstream ss;
    ss << bf.rdbuf();
    const std::string blob = ss.str();
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

    WeightStore store;
    std::size_t expected_offset = 0;
    for (const auto& entry : doc.at("tensors")) {
        for (const auto& [key, value] : entry.items())
            if (key != "layer_id" && key != "tensor_name" && key != "shape" && key != "dtype" && key != "offset"
                && key != "length")
                throw ParseError("unknown key '" + key + "' in weights manifest entry");
        if (entry.at("dtype").get<std::string>() != "f32le")
            throw ParseError("unsupported dtype '" + entry.at("dtype").get<std::string>() + "'");
        const auto shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::size_t>();
        const auto length = entry.at("length").get<std::size_t>();
        const auto id = entry.at("layer_id").get<std::string>();
        if (length != 4 * shape_numel(shape))
            throw ParseError("manifest entry for '" + id + "' declares " + std::to_string(length)
                             + " bytes but its shape needs " + std::to_string(4 * shape_numel(shape)));
        if (offset != expected_offset || offset + length > blob.size())
            throw ParseError("manifest/blob length mismatch at '" + id + "'");
        std::vector<float> data(shape_numel(shape));
        for (std::size_t i = 0; i < data.size(); ++i)
            data[i] = get_f32le(bytes + offset + 4 * i);
        store.set(id, entry.at("tensor_name").get<std::string>(), Tensor(shape, std::move(data)));
        expected_offset = offset + length;
    }
    if (expected_offset != blob.size())
        throw ParseError("manifest/blob length mismatch: manifest covers " + std::to_string(expected_offset)
                         + " bytes, blob has " + std::to_string(blob.size()));
    return store;
}

}  // namespace mebnn
