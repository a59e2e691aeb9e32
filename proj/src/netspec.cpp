#include "mebnn/netspec.hpp"

#include "mebnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mebnn {

using nlohmann::json;

std::string to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::relu: return "relu";
    case LayerKind::softmax: return "softmax";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dropout_point: return "dropout_point";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& text)
{
    static const std::map<std::string, LayerKind> kinds = {
        {"conv2d", LayerKind::conv2d},   {"dense", LayerKind::dense},     {"max_pool", LayerKind::max_pool},
        {"avg_pool", LayerKind::avg_pool}, {"relu", LayerKind::relu},     {"softmax", LayerKind::softmax},
        {"flatten", LayerKind::flatten}, {"dropout_point", LayerKind::dropout_point},
    };
    auto it = kinds.find(text);
    if (it == kinds.end())
        throw ParseError("unknown layer kind '" + text + "'");
    return it->second;
}

bool is_learnable(LayerKind kind) noexcept
{
    return kind == LayerKind::conv2d || kind == LayerKind::dense;
}

bool is_pool(LayerKind kind) noexcept
{
    return kind == LayerKind::max_pool || kind == LayerKind::avg_pool;
}

LayerSpec LayerSpec::conv2d(std::string id, Conv2dParams p)
{
    return {std::move(id), LayerKind::conv2d, p};
}

LayerSpec LayerSpec::dense(std::string id, std::size_t in, std::size_t out)
{
    return {std::move(id), LayerKind::dense, DenseParams{in, out}};
}

LayerSpec LayerSpec::pool(std::string id, LayerKind kind, std::size_t window, std::size_t stride)
{
    return {std::move(id), kind, PoolParams{window, stride}};
}

LayerSpec LayerSpec::simple(std::string id, LayerKind kind)
{
    return {std::move(id), kind, std::monostate{}};
}

namespace {

[[noreturn]] void shape_fail(const LayerSpec& layer, const Shape& in, const std::string& why)
{
    throw ShapeError("layer '" + layer.id + "' (" + to_string(layer.kind) + ") cannot take input "
                     + shape_to_string(in) + ": " + why);
}

}  // namespace

Shape infer_output_shape(const LayerSpec& layer, const Shape& in)
{
    if (in.empty() || shape_numel(in) == 0)
        shape_fail(layer, in, "empty input shape");
    switch (layer.kind) {
    case LayerKind::conv2d: {
        const auto& p = layer.conv();
        if (p.in_channels == 0 || p.out_channels == 0 || p.kernel_h == 0 || p.kernel_w == 0 || p.stride == 0)
            shape_fail(layer, in, "channels, kernel and stride must be positive");
        if (in.size() != 3)
            shape_fail(layer, in, "conv2d needs a (channels, height, width) input");
        if (in[0] != p.in_channels)
            shape_fail(layer, in, "expects " + std::to_string(p.in_channels) + " input channels");
        if (in[1] + 2 * p.padding < p.kernel_h || in[2] + 2 * p.padding < p.kernel_w)
            shape_fail(layer, in, "kernel larger than padded input");
        return {p.out_channels, (in[1] + 2 * p.padding - p.kernel_h) / p.stride + 1,
                (in[2] + 2 * p.padding - p.kernel_w) / p.stride + 1};
    }
    case LayerKind::dense: {
        const auto& p = layer.dense();
        if (p.in_features == 0 || p.out_features == 0)
            shape_fail(layer, in, "in_features and out_features must be positive");
        if (shape_numel(in) != p.in_features)
            shape_fail(layer, in, "expects " + std::to_string(p.in_features) + " input features");
        return {p.out_features};
    }
    case LayerKind::max_pool:
    case LayerKind::avg_pool: {
        const auto& p = layer.pool();
        if (p.window == 0 || p.stride == 0)
            shape_fail(layer, in, "window and stride must be positive");
        if (in.size() == 3) {
            if (in[1] < p.window || in[2] < p.window)
                shape_fail(layer, in, "window larger than input");
            return {in[0], (in[1] - p.window) / p.stride + 1, (in[2] - p.window) / p.stride + 1};
        }
        if (in.size() == 1) {
            if (in[0] < p.window)
                shape_fail(layer, in, "window larger than input");
            return {(in[0] - p.window) / p.stride + 1};
        }
        shape_fail(layer, in, "pooling needs a rank-1 or rank-3 input");
    }
    case LayerKind::flatten:
        return {shape_numel(in)};
    case LayerKind::relu:
    case LayerKind::softmax:
    case LayerKind::dropout_point:
        return in;
    }
    shape_fail(layer, in, "unknown kind");
}

std::size_t NetworkSpec::class_count() const
{
    for (auto it = layers.rbegin(); it != layers.rend(); ++it)
        if (it->kind == LayerKind::dense)
            return it->dense().out_features;
    throw InvalidArgument("network has no dense classifier layer");
}

std::vector<Shape> NetworkSpec::layer_output_shapes() const
{
    std::vector<Shape> shapes;
    shapes.reserve(layers.size());
    Shape cur = input_shape;
    for (const auto& layer : layers) {
        cur = infer_output_shape(layer, cur);
        shapes.push_back(cur);
    }
    return shapes;
}

std::size_t MultiExitSpec::class_count() const
{
    if (exits.empty())
        throw InvalidArgument("multi-exit network has no exits");
    for (auto it = exits.back().head_layers.rbegin(); it != exits.back().head_layers.rend(); ++it)
        if (it->kind == LayerKind::dense)
            return it->dense().out_features;
    throw InvalidArgument("final exit head has no dense classifier");
}

long MultiExitSpec::attach_index(std::size_t exit_pos) const
{
    const auto& id = exits.at(exit_pos).attach_after;
    if (id.empty())
        return -1;
    for (std::size_t i = 0; i < trunk.layers.size(); ++i)
        if (trunk.layers[i].id == id)
            return static_cast<long>(i);
    throw InvalidArgument("exit " + std::to_string(exits[exit_pos].exit_index) + " attaches after unknown layer '"
                          + id + "'");
}

std::size_t MultiExitSpec::bayes_boundary() const
{
    for (std::size_t i = 0; i < trunk.layers.size(); ++i)
        if (trunk.layers[i].kind == LayerKind::dropout_point)
            return i;
    return trunk.layers.size();
}

std::size_t MultiExitSpec::dropout_layer_count() const
{
    std::size_t n = 0;
    for (const auto& ref : all_layers())
        n += ref.layer->kind == LayerKind::dropout_point;
    return n;
}

std::vector<MultiExitSpec::LayerRef> MultiExitSpec::all_layers() const
{
    std::vector<LayerRef> refs;
    for (const auto& l : trunk.layers)
        refs.push_back({&l, Segment::trunk, 0});
    for (const auto& e : exits)
        for (const auto& l : e.head_layers)
            refs.push_back({&l, Segment::head, e.exit_index});
    return refs;
}

// --- IO ----------------------------------------------------------------------

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object())
        throw ParseError(where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            ok = ok || key == a;
        if (!ok)
            throw ParseError("unknown key '" + key + "' in " + where);
    }
}

std::size_t get_size(const json& j, const char* key, std::size_t fallback, bool required, const std::string& where)
{
    if (!j.contains(key)) {
        if (required)
            throw ParseError("missing key '" + std::string(key) + "' in " + where);
        return fallback;
    }
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ParseError("key '" + std::string(key) + "' in " + where + " must be a non-negative integer");
    return v.get<std::size_t>();
}

Shape shape_from_json(const json& j, const std::string& where)
{
    if (!j.is_array() || j.empty())
        throw ParseError(where + " must be a nonempty integer array");
    Shape s;
    for (const auto& v : j) {
        if (!v.is_number_integer() || v.get<long long>() <= 0)
            throw ParseError(where + " entries must be positive integers");
        s.push_back(v.get<std::size_t>());
    }
    if (s.size() != 1 && s.size() != 3)
        throw ParseError(where + " must be (features) or (channels, height, width)");
    return s;
}

json parse_document(const std::string& document)
{
    try {
        return json::parse(document);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed document: ") + e.what());
    }
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<LayerSpec> layers_from_json(const json& j, const std::string& where)
{
    if (!j.is_array())
        throw ParseError(where + " must be an array");
    std::vector<LayerSpec> layers;
    for (const auto& lj : j)
        layers.push_back(layer_from_json(lj));
    return layers;
}

json layers_to_json(const std::vector<LayerSpec>& layers)
{
    auto arr = json::array();
    for (const auto& l : layers)
        arr.push_back(layer_to_json(l));
    return arr;
}

// Shape-checks a chain of layers, naming the producer/consumer pair on failure.
void check_chain(const Shape& input, const std::vector<LayerSpec>& layers, const std::string& input_name)
{
    Shape cur = input;
    std::string producer = input_name;
    for (const auto& l : layers) {
        try {
            cur = infer_output_shape(l, cur);
        } catch (const ShapeError& e) {
            throw ShapeError("shape mismatch between '" + producer + "' and '" + l.id + "': " + e.what());
        }
        producer = l.id;
    }
}

void check_unique_ids(const std::vector<const LayerSpec*>& layers)
{
    std::set<std::string> seen;
    for (const auto* l : layers) {
        if (l->id.empty())
            throw ParseError("layer ids must be nonempty");
        if (!seen.insert(l->id).second)
            throw ParseError("duplicate layer id '" + l->id + "'");
    }
}

}  // namespace

json layer_to_json(const LayerSpec& layer)
{
    json j = {{"id", layer.id}, {"kind", to_string(layer.kind)}};
    if (const auto* c = std::get_if<Conv2dParams>(&layer.params)) {
        j["params"] = {{"in_channels", c->in_channels}, {"out_channels", c->out_channels},
                       {"kernel_h", c->kernel_h},       {"kernel_w", c->kernel_w},
                       {"stride", c->stride},           {"padding", c->padding}};
    } else if (const auto* d = std::get_if<DenseParams>(&layer.params)) {
        j["params"] = {{"in_features", d->in_features}, {"out_features", d->out_features}};
    } else if (const auto* p = std::get_if<PoolParams>(&layer.params)) {
        j["params"] = {{"window", p->window}, {"stride", p->stride}};
    }
    return j;
}

LayerSpec layer_from_json(const json& j)
{
    reject_unknown_keys(j, {"id", "kind", "params"}, "layer");
    if (!j.contains("id") || !j.at("id").is_string())
        throw ParseError("layer is missing a string 'id'");
    if (!j.contains("kind") || !j.at("kind").is_string())
        throw ParseError("layer '" + j.at("id").get<std::string>() + "' is missing a string 'kind'");
    LayerSpec l;
    l.id = j.at("id").get<std::string>();
    l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    const json params = j.value("params", json::object());
    const std::string where = "params of layer '" + l.id + "'";
    switch (l.kind) {
    case LayerKind::conv2d: {
        reject_unknown_keys(params, {"in_channels", "out_channels", "kernel_h", "kernel_w", "stride", "padding"}, where);
        Conv2dParams p;
        p.in_channels = get_size(params, "in_channels", 0, true, where);
        p.out_channels = get_size(params, "out_channels", 0, true, where);
        p.kernel_h = get_size(params, "kernel_h", 0, true, where);
        p.kernel_w = get_size(params, "kernel_w", p.kernel_h, false, where);
        p.stride = get_size(params, "stride", 1, false, where);
        p.padding = get_size(params, "padding", 0, false, where);
        l.params = p;
        break;
    }
    case LayerKind::dense: {
        reject_unknown_keys(params, {"in_features", "out_features"}, where);
        l.params = DenseParams{get_size(params, "in_features", 0, true, where),
                               get_size(params, "out_features", 0, true, where)};
        break;
    }
    case LayerKind::max_pool:
    case LayerKind::avg_pool: {
        reject_unknown_keys(params, {"window", "stride"}, where);
        PoolParams p;
        p.window = get_size(params, "window", 0, true, where);
        p.stride = get_size(params, "stride", p.window, false, where);
        l.params = p;
        break;
    }
    default:
        reject_unknown_keys(params, {}, where);
        l.params = std::monostate{};
    }
    return l;
}

json network_to_json(const NetworkSpec& net)
{
    return {{"input_shape", net.input_shape}, {"layers", layers_to_json(net.layers)}};
}

std::string serialize_network(const NetworkSpec& net)
{
    return network_to_json(net).dump(2) + "\n";
}

NetworkSpec load_network(const std::string& document)
{
    const json j = parse_document(document);
    if (j.is_object() && (j.contains("exits") || j.contains("dropout")))
        throw ParseError("document describes a multi-exit network; load it as a multi-exit spec");
    reject_unknown_keys(j, {"input_shape", "layers"}, "network document");
    if (!j.contains("input_shape") || !j.contains("layers"))
        throw ParseError("network document needs 'input_shape' and 'layers'");

    NetworkSpec net;
    net.input_shape = shape_from_json(j.at("input_shape"), "input_shape");
    net.layers = layers_from_json(j.at("layers"), "layers");
    if (net.layers.empty())
        throw ParseError("network has no layers");

    std::vector<const LayerSpec*> refs;
    for (const auto& l : net.layers)
        refs.push_back(&l);
    check_unique_ids(refs);
    check_chain(net.input_shape, net.layers, "input");
    for (const auto& l : net.layers)
        if (l.kind == LayerKind::dropout_point)
            throw ParseError("layer '" + l.id + "': dropout points are only valid in multi-exit documents");

    const auto n = net.layers.size();
    if (n < 2 || net.layers[n - 1].kind != LayerKind::softmax || net.layers[n - 2].kind != LayerKind::dense)
        throw ParseError("network must end with a terminal classifier: dense followed by softmax");
    return net;
}

NetworkSpec load_network_file(const std::string& path)
{
    return load_network(read_file(path));
}

json multi_exit_to_json(const MultiExitSpec& me)
{
    json j = network_to_json(me.trunk);
    auto exits = json::array();
    for (const auto& e : me.exits)
        exits.push_back({{"exit_index", e.exit_index}, {"attach_after", e.attach_after},
                         {"layers", layers_to_json(e.head_layers)}});
    j["exits"] = std::move(exits);
    if (me.dropout)
        j["dropout"] = *me.dropout;
    j["partial_dropout"] = me.partial_dropout;
    if (!me.masks_file.empty())
        j["masks_file"] = me.masks_file;
    return j;
}

std::string serialize_multi_exit(const MultiExitSpec& me)
{
    return multi_exit_to_json(me).dump(2) + "\n";
}

namespace {

// Canonical site list: head sites belong to their exit; a trunk site belongs
// to the shallowest exit whose path passes through it.
std::vector<DropoutSite> collect_sites(const MultiExitSpec& me)
{
    std::vector<DropoutSite> sites;
    for (std::size_t i = 0; i < me.trunk.layers.size(); ++i) {
        if (me.trunk.layers[i].kind != LayerKind::dropout_point)
            continue;
        int owner = me.exits.empty() ? 1 : me.exits.back().exit_index;
        for (std::size_t k = 0; k < me.exits.size(); ++k) {
            if (me.attach_index(k) >= static_cast<long>(i)) {
                owner = me.exits[k].exit_index;
                break;
            }
        }
        sites.push_back({owner, Segment::trunk, i, me.trunk.layers[i].id});
    }
    for (const auto& e : me.exits)
        for (std::size_t i = 0; i < e.head_layers.size(); ++i)
            if (e.head_layers[i].kind == LayerKind::dropout_point)
                sites.push_back({e.exit_index, Segment::head, i, e.head_layers[i].id});
    return sites;
}

bool sites_partial(const MultiExitSpec& me)
{
    if (me.exits.empty())
        return true;
    const long shallowest = me.attach_index(0);
    for (std::size_t i = 0; i < me.trunk.layers.size(); ++i)
        if (me.trunk.layers[i].kind == LayerKind::dropout_point && static_cast<long>(i) <= shallowest)
            return false;
    return true;
}

}  // namespace

MultiExitSpec load_multi_exit(const std::string& document)
{
    const json j = parse_document(document);
    reject_unknown_keys(j, {"input_shape", "layers", "exits", "dropout", "partial_dropout", "masks_file"},
                        "multi-exit document");
    if (!j.contains("input_shape") || !j.contains("layers") || !j.contains("exits"))
        throw ParseError("multi-exit document needs 'input_shape', 'layers' and 'exits'");

    MultiExitSpec me;
    me.trunk.input_shape = shape_from_json(j.at("input_shape"), "input_shape");
    me.trunk.layers = layers_from_json(j.at("layers"), "layers");
    if (!j.at("exits").is_array())
        throw ParseError("'exits' must be an array");
    for (const auto& ej : j.at("exits")) {
        reject_unknown_keys(ej, {"exit_index", "attach_after", "layers"}, "exit");
        ExitSpec e;
        if (!ej.contains("exit_index") || !ej.at("exit_index").is_number_integer())
            throw ParseError("exit is missing an integer 'exit_index'");
        e.exit_index = ej.at("exit_index").get<int>();
        e.attach_after = ej.value("attach_after", std::string{});
        e.head_layers = layers_from_json(ej.at("layers"), "exit layers");
        me.exits.push_back(std::move(e));
    }
    if (j.contains("dropout"))
        me.dropout = j.at("dropout").get<DropoutConfig>();
    if (j.contains("partial_dropout")) {
        if (!j.at("partial_dropout").is_boolean())
            throw ParseError("'partial_dropout' must be a boolean");
        me.partial_dropout = j.at("partial_dropout").get<bool>();
    }
    if (j.contains("masks_file"))
        me.masks_file = j.at("masks_file").get<std::string>();

    const auto diags = validate(me);
    if (!diags.empty())
        throw ParseError("invalid multi-exit spec: layer '" + diags.front().layer_id + "': " + diags.front().message);
    me.dropout_sites = collect_sites(me);
    return me;
}

MultiExitSpec load_multi_exit_file(const std::string& path)
{
    return load_multi_exit(read_file(path));
}

// --- transformations ---------------------------------------------------------

std::vector<LayerSpec> default_head_template()
{
    return {
        LayerSpec::pool("gap", LayerKind::avg_pool, 0, 0),
        LayerSpec::dense("fc", 0, 0),
        LayerSpec::simple("softmax", LayerKind::softmax),
    };
}

namespace {

std::vector<LayerSpec> instantiate_head(const std::vector<LayerSpec>& tmpl, const Shape& block_out,
                                        const std::string& block_id, int exit_index, std::size_t classes)
{
    const std::string prefix = "exit" + std::to_string(exit_index) + "_";
    auto fail = [&](const std::string& why) -> InvalidArgument {
        return InvalidArgument("head template cannot be shape-adapted to the output " + shape_to_string(block_out)
                               + " of '" + block_id + "': " + why);
    };

    std::vector<LayerSpec> head;
    Shape cur = block_out;
    for (const auto& t : tmpl) {
        LayerSpec l = t;
        l.id = prefix + t.id;
        if (is_pool(l.kind) && std::get<PoolParams>(l.params).window == 0) {
            if (cur.size() == 1)
                continue;  // global pooling of a flat vector is the identity
            if (cur[1] != cur[2])
                throw fail("global pooling needs a square feature map");
            l.params = PoolParams{cur[1], cur[1]};
        } else if (l.kind == LayerKind::dense) {
            auto p = l.dense();
            if (p.in_features == 0)
                p.in_features = shape_numel(cur);
            if (p.out_features == 0)
                p.out_features = classes;
            l.params = p;
        } else if (l.kind == LayerKind::conv2d) {
            auto p = l.conv();
            if (p.in_channels == 0 && cur.size() == 3)
                p.in_channels = cur[0];
            l.params = p;
        }
        try {
            cur = infer_output_shape(l, cur);
        } catch (const ShapeError& e) {
            throw fail(e.what());
        }
        head.push_back(std::move(l));
    }
    if (head.empty() || head.back().kind != LayerKind::softmax)
        throw fail("head must end in softmax");
    if (shape_numel(cur) != classes)
        throw fail("head produces " + std::to_string(shape_numel(cur)) + " outputs, expected " + std::to_string(classes));
    return head;
}

std::string unique_id(const std::string& base, const std::set<std::string>& taken)
{
    if (!taken.count(base))
        return base;
    for (int i = 1;; ++i) {
        auto candidate = base + "_" + std::to_string(i);
        if (!taken.count(candidate))
            return candidate;
    }
}

}  // namespace

MultiExitSpec place_exits(const NetworkSpec& net, const std::vector<LayerSpec>& head_template)
{
    const auto n = net.layers.size();
    if (n < 2 || net.layers[n - 1].kind != LayerKind::softmax || net.layers[n - 2].kind != LayerKind::dense)
        throw InvalidArgument("place_exits: network must end with dense followed by softmax");
    check_chain(net.input_shape, net.layers, "input");

    const std::size_t classes = net.class_count();
    const auto shapes = net.layer_output_shapes();

    MultiExitSpec me;
    me.trunk.input_shape = net.input_shape;
    me.trunk.layers.assign(net.layers.begin(), net.layers.end() - 2);
    const std::size_t trunk_len = me.trunk.layers.size();

    int index = 1;
    for (std::size_t i = 0; i + 1 < trunk_len; ++i) {
        if (!is_pool(me.trunk.layers[i].kind))
            continue;
        ExitSpec e;
        e.exit_index = index;
        e.attach_after = me.trunk.layers[i].id;
        e.head_layers = instantiate_head(head_template, shapes[i], e.attach_after, index, classes);
        me.exits.push_back(std::move(e));
        ++index;
    }

    ExitSpec final_exit;
    final_exit.exit_index = index;
    final_exit.attach_after = trunk_len ? me.trunk.layers.back().id : std::string{};
    final_exit.head_layers.assign(net.layers.end() - 2, net.layers.end());
    me.exits.push_back(std::move(final_exit));

    std::set<std::string> ids;
    for (const auto& ref : me.all_layers())
        if (!ids.insert(ref.layer->id).second)
            throw InvalidArgument("place_exits: generated head id '" + ref.layer->id + "' collides with an existing layer");
    return me;
}

MultiExitSpec select_exits(const MultiExitSpec& me, std::size_t n_exit)
{
    if (n_exit < 1 || n_exit > me.exits.size())
        throw InvalidArgument("select_exits: n_exit must lie in [1, " + std::to_string(me.exits.size()) + "]");
    MultiExitSpec out = me;
    out.exits.erase(out.exits.begin(), out.exits.end() - static_cast<long>(n_exit));
    for (std::size_t k = 0; k < out.exits.size(); ++k)
        out.exits[k].exit_index = static_cast<int>(k + 1);
    out.dropout_sites = collect_sites(out);
    out.partial_dropout = sites_partial(out);
    return out;
}

MultiExitSpec strip_dropout(const MultiExitSpec& me)
{
    MultiExitSpec out = me;
    auto is_drop = [](const LayerSpec& l) { return l.kind == LayerKind::dropout_point; };
    std::erase_if(out.trunk.layers, is_drop);
    for (auto& e : out.exits)
        std::erase_if(e.head_layers, is_drop);
    out.dropout.reset();
    out.dropout_sites.clear();
    out.partial_dropout = true;
    out.masks_file.clear();
    return out;
}

MultiExitSpec insert_dropout(const MultiExitSpec& me, const DropoutConfig& cfg, std::size_t depth)
{
    cfg.validate();
    if (depth < 1)
        throw InvalidArgument("insert_dropout: depth must be >= 1 (a Bayesian network needs at least one dropout layer)");
    if (me.exits.empty())
        throw InvalidArgument("insert_dropout: network has no exits");

    const MultiExitSpec base = strip_dropout(me);
    const auto& trunk = base.trunk.layers;

    auto learnable_on_path = [&](std::size_t k) {
        std::size_t count = 0;
        for (const auto& l : base.exits[k].head_layers)
            count += is_learnable(l.kind);
        for (long i = 0; i <= base.attach_index(k); ++i)
            count += is_learnable(trunk[static_cast<std::size_t>(i)].kind);
        return count;
    };
    const std::size_t available = learnable_on_path(base.exits.size() - 1);
    if (depth > available)
        throw InvalidArgument("insert_dropout: depth " + std::to_string(depth) + " exceeds the "
                              + std::to_string(available) + " learnable layers on the deepest exit path");

    std::set<std::size_t> trunk_marks;
    std::vector<std::set<std::size_t>> head_marks(base.exits.size());
    for (std::size_t k = 0; k < base.exits.size(); ++k) {
        std::size_t placed = 0;
        const auto& head = base.exits[k].head_layers;
        for (std::size_t i = head.size(); i-- > 0 && placed < depth;) {
            if (is_learnable(head[i].kind)) {
                head_marks[k].insert(i);
                ++placed;
            }
        }
        for (long i = base.attach_index(k); i >= 0 && placed < depth; --i) {
            if (is_learnable(trunk[static_cast<std::size_t>(i)].kind)) {
                trunk_marks.insert(static_cast<std::size_t>(i));
                ++placed;
            }
        }
    }

    std::set<std::string> ids;
    for (const auto& ref : base.all_layers())
        ids.insert(ref.layer->id);
    auto make_point = [&](const std::string& before_id) {
        auto id = unique_id("drop_" + before_id, ids);
        ids.insert(id);
        return LayerSpec::simple(id, LayerKind::dropout_point);
    };

    MultiExitSpec out = base;
    out.trunk.layers.clear();
    for (std::size_t i = 0; i < trunk.size(); ++i) {
        if (trunk_marks.count(i))
            out.trunk.layers.push_back(make_point(trunk[i].id));
        out.trunk.layers.push_back(trunk[i]);
    }
    for (std::size_t k = 0; k < base.exits.size(); ++k) {
        auto& head = out.exits[k].head_layers;
        head.clear();
        for (std::size_t i = 0; i < base.exits[k].head_layers.size(); ++i) {
            if (head_marks[k].count(i))
                head.push_back(make_point(base.exits[k].head_layers[i].id));
            head.push_back(base.exits[k].head_layers[i]);
        }
    }
    out.dropout = cfg;
    out.dropout_sites = collect_sites(out);
    out.partial_dropout = sites_partial(out);
    return out;
}

NetworkSpec scale_channels(const NetworkSpec& net, double fraction)
{
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw InvalidArgument("scale_channels: fraction must lie in (0, 1]");
    long classifier = -1;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (net.layers[i].kind == LayerKind::dense)
            classifier = static_cast<long>(i);

    NetworkSpec out = net;
    Shape cur = out.input_shape;
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
        auto& l = out.layers[i];
        if (l.kind == LayerKind::dense) {
            auto p = l.dense();
            p.in_features = shape_numel(cur);
            if (static_cast<long>(i) != classifier)
                p.out_features = static_cast<std::size_t>(std::floor(static_cast<double>(p.out_features) * fraction));
            if (p.out_features == 0)
                throw InvalidArgument("scale_channels: layer '" + l.id + "' becomes 0 wide at fraction "
                                      + std::to_string(fraction));
            l.params = p;
        } else if (l.kind == LayerKind::conv2d) {
            auto p = l.conv();
            if (cur.size() == 3)
                p.in_channels = cur[0];
            p.out_channels = static_cast<std::size_t>(std::floor(static_cast<double>(p.out_channels) * fraction));
            if (p.out_channels == 0)
                throw InvalidArgument("scale_channels: layer '" + l.id + "' becomes 0 wide at fraction "
                                      + std::to_string(fraction));
            l.params = p;
        }
        cur = infer_output_shape(l, cur);
    }
    return out;
}

NetworkSpec exit_path_network(const MultiExitSpec& me, std::size_t exit_pos)
{
    NetworkSpec net;
    net.input_shape = me.trunk.input_shape;
    const long attach = me.attach_index(exit_pos);
    for (long i = 0; i <= attach; ++i)
        net.layers.push_back(me.trunk.layers[static_cast<std::size_t>(i)]);
    for (const auto& l : me.exits[exit_pos].head_layers)
        net.layers.push_back(l);
    return net;
}

// --- validation --------------------------------------------------------------

std::vector<Diagnostic> validate(const NetworkSpec& net)
{
    std::vector<Diagnostic> diags;
    std::set<std::string> seen;
    for (const auto& l : net.layers)
        if (!seen.insert(l.id).second)
            diags.push_back({l.id, "duplicate layer id"});
    try {
        check_chain(net.input_shape, net.layers, "input");
    } catch (const ShapeError& e) {
        diags.push_back({"", e.what()});
    }
    return diags;
}

std::vector<Diagnostic> validate(const MultiExitSpec& me)
{
    std::vector<Diagnostic> diags;

    std::map<std::string, int> counts;
    for (const auto& ref : me.all_layers())
        ++counts[ref.layer->id];
    for (const auto& [id, c] : counts)
        if (c > 1)
            diags.push_back({id, "duplicate layer id (appears " + std::to_string(c) + " times)"});

    if (me.exits.empty()) {
        diags.push_back({"", "multi-exit network needs at least one exit"});
        return diags;
    }

    std::vector<Shape> trunk_shapes;
    try {
        check_chain(me.trunk.input_shape, me.trunk.layers, "input");
        trunk_shapes = me.trunk.layer_output_shapes();
    } catch (const ShapeError& e) {
        diags.push_back({"", e.what()});
        return diags;
    }

    std::size_t classes = 0;
    for (auto it = me.exits.back().head_layers.rbegin(); it != me.exits.back().head_layers.rend(); ++it) {
        if (it->kind == LayerKind::dense) {
            classes = it->dense().out_features;
            break;
        }
    }

    long prev_attach = -2;
    for (std::size_t k = 0; k < me.exits.size(); ++k) {
        const auto& e = me.exits[k];
        const std::string tag = "exit " + std::to_string(e.exit_index);
        if (e.exit_index != static_cast<int>(k + 1))
            diags.push_back({e.attach_after, tag + ": exit_index must be " + std::to_string(k + 1) + " (depth order)"});

        long attach = -1;
        if (!e.attach_after.empty()) {
            attach = -2;
            for (std::size_t i = 0; i < me.trunk.layers.size(); ++i)
                if (me.trunk.layers[i].id == e.attach_after)
                    attach = static_cast<long>(i);
            if (attach == -2) {
                diags.push_back({e.attach_after, tag + ": attach point is not a trunk layer"});
                continue;
            }
        }
        if (attach <= prev_attach)
            diags.push_back({e.attach_after, tag + ": exits must be sorted by strictly increasing trunk depth"});
        prev_attach = attach;

        if (e.head_layers.empty() || e.head_layers.back().kind != LayerKind::softmax) {
            diags.push_back({e.head_layers.empty() ? e.attach_after : e.head_layers.back().id,
                             tag + ": head must end in softmax"});
            continue;
        }
        const Shape feat = attach < 0 ? me.trunk.input_shape : trunk_shapes[static_cast<std::size_t>(attach)];
        try {
            check_chain(feat, e.head_layers, e.attach_after.empty() ? "input" : e.attach_after);
            Shape out = feat;
            for (const auto& l : e.head_layers)
                out = infer_output_shape(l, out);
            if (shape_numel(out) != classes)
                diags.push_back({e.head_layers.back().id, tag + ": head produces " + std::to_string(shape_numel(out))
                                                              + " classes, expected " + std::to_string(classes)});
        } catch (const ShapeError& ex) {
            diags.push_back({e.head_layers.front().id, tag + ": " + ex.what()});
        }
    }

    const std::size_t n_drop = me.dropout_layer_count();
    if (n_drop > 0 && !me.dropout)
        diags.push_back({"", "network has dropout points but no dropout config"});
    if (me.dropout) {
        try {
            me.dropout->validate();
        } catch (const InvalidArgument& ex) {
            diags.push_back({"", ex.what()});
        }
    }

    if (me.partial_dropout && prev_attach > -2) {
        long shallowest = -1;
        try {
            shallowest = me.attach_index(0);
        } catch (const InvalidArgument&) {
            shallowest = -1;
        }
        for (std::size_t i = 0; i < me.trunk.layers.size(); ++i) {
            if (me.trunk.layers[i].kind == LayerKind::dropout_point && static_cast<long>(i) <= shallowest)
                diags.push_back({me.trunk.layers[i].id,
                                 "dropout point precedes the shallowest exit's attach point while partial dropout is set"});
        }
    }

    if (me.dropout && me.dropout->kind == DropoutKind::masksembles) {
        auto check_units = [&](const LayerSpec& l, const Shape& in) {
            if (l.kind == LayerKind::dropout_point
                && dropout_unit_count(in) < static_cast<std::size_t>(me.dropout->num_masks))
                diags.push_back({l.id, "Masksembles needs at least num_masks maskable units, input has "
                                           + std::to_string(dropout_unit_count(in))});
        };
        Shape cur = me.trunk.input_shape;
        for (std::size_t i = 0; i < me.trunk.layers.size(); ++i) {
            check_units(me.trunk.layers[i], cur);
            cur = trunk_shapes[i];
        }
        for (std::size_t k = 0; k < me.exits.size(); ++k) {
            long attach = -1;
            try {
                attach = me.attach_index(k);
            } catch (const InvalidArgument&) {
                continue;
            }
            Shape s = attach < 0 ? me.trunk.input_shape : trunk_shapes[static_cast<std::size_t>(attach)];
            for (const auto& l : me.exits[k].head_layers) {
                check_units(l, s);
                try {
                    s = infer_output_shape(l, s);
                } catch (const ShapeError&) {
                    break;
                }
            }
        }
    }
    return diags;
}

}  // namespace mebnn
