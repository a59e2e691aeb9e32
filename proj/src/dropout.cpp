#include "mebnn/dropout.hpp"

#include "mebnn/error.hpp"

#include <cmath>
#include <cstdio>

namespace mebnn {

std::string to_string(DropoutKind kind)
{
    return kind == DropoutKind::mcd ? "mcd" : "masksembles";
}

DropoutKind dropout_kind_from_string(const std::string& text)
{
    if (text == "mcd")
        return DropoutKind::mcd;
    if (text == "masksembles")
        return DropoutKind::masksembles;
    throw ParseError("unknown dropout kind '" + text + "' (expected mcd or masksembles)");
}

std::string to_string(Granularity g)
{
    return g == Granularity::element ? "element" : "channel";
}

Granularity granularity_from_string(const std::string& text)
{
    if (text == "element")
        return Granularity::element;
    if (text == "channel")
        return Granularity::channel;
    throw ParseError("unknown dropout granularity '" + text + "' (expected element or channel)");
}

DropoutConfig DropoutConfig::mcd(double keep_rate, Granularity g, std::uint64_t seed)
{
    DropoutConfig cfg;
    cfg.kind = DropoutKind::mcd;
    cfg.keep_rate = keep_rate;
    cfg.granularity = g;
    cfg.seed = seed;
    return cfg;
}

DropoutConfig DropoutConfig::masksembles(int num_masks, double scale)
{
    DropoutConfig cfg;
    cfg.kind = DropoutKind::masksembles;
    cfg.num_masks = num_masks;
    cfg.scale = scale;
    return cfg;
}

void DropoutConfig::validate() const
{
    if (kind == DropoutKind::mcd) {
        if (!(keep_rate > 0.0 && keep_rate <= 1.0))
            throw InvalidArgument("MCD keep_rate must lie in (0, 1] (got " + std::to_string(keep_rate) + ")");
    } else {
        if (num_masks < 1)
            throw InvalidArgument("Masksembles num_masks must be >= 1");
        if (!(scale >= 1.0))
            throw InvalidArgument("Masksembles scale must be >= 1 (got " + std::to_string(scale) + ")");
    }
}

std::string DropoutConfig::hash() const
{
    nlohmann::json j = *this;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

void to_json(nlohmann::json& j, const DropoutConfig& cfg)
{
    j = nlohmann::json::object();
    j["kind"] = to_string(cfg.kind);
    if (cfg.kind == DropoutKind::mcd) {
        j["keep_rate"] = cfg.keep_rate;
        j["granularity"] = to_string(cfg.granularity);
        j["inverted"] = cfg.inverted;
        j["seed"] = cfg.seed;
    } else {
        j["num_masks"] = cfg.num_masks;
        j["scale"] = cfg.scale;
    }
}

void from_json(const nlohmann::json& j, DropoutConfig& cfg)
{
    if (!j.is_object())
        throw ParseError("dropout config must be an object");
    cfg = DropoutConfig{};
    cfg.kind = dropout_kind_from_string(j.at("kind").get<std::string>());
    for (const auto& [key, value] : j.items()) {
        if (key == "kind")
            continue;
        if (cfg.kind == DropoutKind::mcd && key == "keep_rate")
            cfg.keep_rate = value.get<double>();
        else if (cfg.kind == DropoutKind::mcd && key == "granularity")
            cfg.granularity = granularity_from_string(value.get<std::string>());
        else if (cfg.kind == DropoutKind::mcd && key == "inverted")
            cfg.inverted = value.get<bool>();
        else if (cfg.kind == DropoutKind::mcd && key == "seed")
            cfg.seed = value.get<std::uint64_t>();
        else if (cfg.kind == DropoutKind::masksembles && key == "num_masks")
            cfg.num_masks = value.get<int>();
        else if (cfg.kind == DropoutKind::masksembles && key == "scale")
            cfg.scale = value.get<double>();
        else
            throw ParseError("unknown key '" + key + "' in " + to_string(cfg.kind) + " dropout config");
    }
    cfg.validate();
}

std::size_t MaskSet::ones_per_mask() const
{
    if (masks.empty())
        return 0;
    std::size_t k = 0;
    for (auto bit : masks.front())
        k += bit;
    return k;
}

void to_json(nlohmann::json& j, const MaskSet& m)
{
    j = nlohmann::json::object();
    j["feature_count"] = m.feature_count;
    j["num_masks"] = m.num_masks();
    j["scale"] = m.scale;
    auto rows = nlohmann::json::array();
    for (const auto& mask : m.masks) {
        auto row = nlohmann::json::array();
        for (auto bit : mask)
            row.push_back(static_cast<int>(bit));
        rows.push_back(std::move(row));
    }
    j["masks"] = std::move(rows);
}

void from_json(const nlohmann::json& j, MaskSet& m)
{
    if (!j.is_object())
        throw ParseError("mask set must be an object");
    for (const auto& [key, value] : j.items()) {
        if (key != "feature_count" && key != "num_masks" && key != "scale" && key != "masks")
            throw ParseError("unknown key '" + key + "' in mask set");
    }
    m = MaskSet{};
    m.feature_count = j.at("feature_count").get<std::size_t>();
    m.scale = j.at("scale").get<double>();
    const auto num_masks = j.at("num_masks").get<std::size_t>();
    for (const auto& row : j.at("masks")) {
        std::vector<std::uint8_t> mask;
        for (const auto& bit : row) {
            const int b = bit.get<int>();
            if (b != 0 && b != 1)
                throw ParseError("mask entries must be 0 or 1");
            mask.push_back(static_cast<std::uint8_t>(b));
        }
        if (mask.size() != m.feature_count)
            throw ParseError("mask row length " + std::to_string(mask.size()) + " != feature_count "
                             + std::to_string(m.feature_count));
        m.masks.push_back(std::move(mask));
    }
    if (m.masks.size() != num_masks)
        throw ParseError("mask set declares " + std::to_string(num_masks) + " masks but lists "
                         + std::to_string(m.masks.size()));
}

MaskSet generate_masks(std::size_t feature_count, std::size_t num_masks, double scale)
{
    if (num_masks < 1)
        throw InvalidArgument("generate_masks: num_masks must be >= 1");
    if (feature_count < num_masks)
        throw InvalidArgument("generate_masks: feature_count (" + std::to_string(feature_count)
                              + ") must be >= num_masks (" + std::to_string(num_masks) + ")");
    if (!(scale >= 1.0))
        throw InvalidArgument("generate_masks: scale must be >= 1");

    const double F = static_cast<double>(feature_count);
    const double N = static_cast<double>(num_masks);
    const auto k = std::min(feature_count, static_cast<std::size_t>(std::llround(scale * F / N)));

    MaskSet set;
    set.feature_count = feature_count;
    set.scale = scale;
    set.masks.assign(num_masks, std::vector<std::uint8_t>(feature_count, 0));
    for (std::size_t i = 0; i < num_masks; ++i) {
        const auto offset = static_cast<std::size_t>(std::llround(static_cast<double>(i) * F / N));
        for (std::size_t j = 0; j < k; ++j)
            set.masks[i][(offset + j) % feature_count] = 1;
    }
    return set;
}

std::size_t dropout_unit_count(const Shape& shape)
{
    return shape.size() == 3 ? shape[0] : shape_numel(shape);
}

Tensor mcd_forward(const Tensor& input, double keep_rate, Granularity granularity, const RngStream& rng,
                   bool inverted)
{
    if (!(keep_rate > 0.0 && keep_rate <= 1.0))
        throw InvalidArgument("mcd_forward: keep_rate must lie in (0, 1] (got " + std::to_string(keep_rate) + ")");

    const auto scale = static_cast<float>(inverted ? 1.0 / keep_rate : keep_rate);
    Tensor out = input;
    auto data = out.data();
    if (granularity == Granularity::channel && input.rank() == 3) {
        const std::size_t plane = input.shape()[1] * input.shape()[2];
        for (std::size_t c = 0; c < input.shape()[0]; ++c) {
            const bool drop = rng.uniform_at(c) > keep_rate;
            for (std::size_t i = c * plane; i < (c + 1) * plane; ++i)
                data[i] = drop ? 0.0f : data[i] * scale;
        }
    } else {
        for (std::size_t i = 0; i < data.size(); ++i) {
            const bool drop = rng.uniform_at(i) > keep_rate;
            data[i] = drop ? 0.0f : data[i] * scale;
        }
    }
    return out;
}

Tensor masksembles_forward(const Tensor& input, std::size_t mask_index, const MaskSet& masks)
{
    if (mask_index >= masks.num_masks())
        throw InvalidArgument("masksembles_forward: mask_index " + std::to_string(mask_index) + " out of range [0, "
                              + std::to_string(masks.num_masks()) + ")");
    const std::size_t units = dropout_unit_count(input.shape());
    if (units != masks.feature_count)
        throw ShapeError("masksembles_forward: input has " + std::to_string(units) + " maskable units but mask set has "
                         + std::to_string(masks.feature_count) + " features");

    const auto& mask = masks.masks[mask_index];
    const std::size_t plane = input.numel() / units;
    Tensor out = input;
    auto data = out.data();
    for (std::size_t u = 0; u < units; ++u) {
        if (mask[u] == 0) {
            for (std::size_t i = u * plane; i < (u + 1) * plane; ++i)
                data[i] = 0.0f;
        }
    }
    return out;
}

}  // namespace mebnn
