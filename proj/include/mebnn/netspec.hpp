#pragma once

#include "mebnn/dropout.hpp"
#include "mebnn/tensor.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mebnn {

enum class LayerKind { conv2d, dense, max_pool, avg_pool, relu, softmax, flatten, dropout_point };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& text);
bool is_learnable(LayerKind kind) noexcept;
bool is_pool(LayerKind kind) noexcept;

struct Conv2dParams {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    friend bool operator==(const Conv2dParams&, const Conv2dParams&) = default;
};

struct DenseParams {
    // 0 means "infer from the incoming shape" (head templates only).
    std::size_t in_features = 0;
    std::size_t out_features = 0;
    friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

struct PoolParams {
    // window 0 in a head template means global pooling over the spatial extent.
    std::size_t window = 2;
    std::size_t stride = 2;
    friend bool operator==(const PoolParams&, const PoolParams&) = default;
};

using LayerParams = std::variant<std::monostate, Conv2dParams, DenseParams, PoolParams>;

struct LayerSpec {
    std::string id;
    LayerKind kind = LayerKind::relu;
    LayerParams params;

    static LayerSpec conv2d(std::string id, Conv2dParams p);
    static LayerSpec dense(std::string id, std::size_t in, std::size_t out);
    static LayerSpec pool(std::string id, LayerKind kind, std::size_t window, std::size_t stride);
    static LayerSpec simple(std::string id, LayerKind kind);

    const Conv2dParams& conv() const { return std::get<Conv2dParams>(params); }
    const DenseParams& dense() const { return std::get<DenseParams>(params); }
    const PoolParams& pool() const { return std::get<PoolParams>(params); }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Output shape of `layer` applied to `in`; throws ShapeError naming the layer.
Shape infer_output_shape(const LayerSpec& layer, const Shape& in);

struct NetworkSpec {
    Shape input_shape;
    std::vector<LayerSpec> layers;

    // Class count of the terminal classifier (out_features of the last dense).
    std::size_t class_count() const;
    // Shapes after each layer; shapes[i] is the output of layers[i].
    std::vector<Shape> layer_output_shapes() const;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct ExitSpec {
    int exit_index = 1;
    // Trunk layer the head reads from; empty means the network input.
    std::string attach_after;
    std::vector<LayerSpec> head_layers;

    friend bool operator==(const ExitSpec&, const ExitSpec&) = default;
};

enum class Segment { trunk, head };

struct DropoutSite {
    // Exit whose insertion walk produced this site.
    int exit_index = 1;
    Segment segment = Segment::head;
    // Index of the dropout_point layer within its segment (trunk or that exit's head).
    std::size_t position = 0;
    std::string layer_id;

    friend bool operator==(const DropoutSite&, const DropoutSite&) = default;
};

struct MultiExitSpec {
    // Shared trunk (everything but the exit heads), possibly with dropout_point layers.
    NetworkSpec trunk;
    std::vector<ExitSpec> exits;
    std::optional<DropoutConfig> dropout;
    std::vector<DropoutSite> dropout_sites;
    // True when every dropout site sits at or after the shallowest exit's attach point.
    bool partial_dropout = true;
    // Optional path of a mask file accompanying a Masksembles network.
    std::string masks_file;

    std::size_t n_exit() const noexcept { return exits.size(); }
    std::size_t class_count() const;

    // Index of the trunk layer exit k (0-based position in `exits`) attaches
    // after, or -1 for the network input.
    long attach_index(std::size_t exit_pos) const;
    // First trunk index holding a dropout_point, or trunk size if none: the
    // deterministic (cacheable) prefix is [0, bayes_boundary()).
    std::size_t bayes_boundary() const;
    std::size_t dropout_layer_count() const;

    // Every layer in the network (trunk, then each head) with its segment label.
    struct LayerRef {
        const LayerSpec* layer;
        Segment segment;
        int exit_index;  // 0 for trunk layers
    };
    std::vector<LayerRef> all_layers() const;

    friend bool operator==(const MultiExitSpec&, const MultiExitSpec&) = default;
};

// --- structured-text IO -------------------------------------------------------

NetworkSpec load_network(const std::string& document);
NetworkSpec load_network_file(const std::string& path);
nlohmann::json network_to_json(const NetworkSpec& net);
std::string serialize_network(const NetworkSpec& net);

// Multi-exit documents extend the network grammar with `exits[]`, `dropout`
// and `partial_dropout`; dropout sites are recomputed from the layer lists.
MultiExitSpec load_multi_exit(const std::string& document);
MultiExitSpec load_multi_exit_file(const std::string& path);
nlohmann::json multi_exit_to_json(const MultiExitSpec& me);
std::string serialize_multi_exit(const MultiExitSpec& me);

nlohmann::json layer_to_json(const LayerSpec& layer);
LayerSpec layer_from_json(const nlohmann::json& j);

// --- transformations ---------------------------------------------------------

// global-average-pool -> dense(-> classes) -> softmax; dims inferred at placement.
std::vector<LayerSpec> default_head_template();

// One exit after every pooling layer of the trunk plus the original terminal
// classifier (last dense + softmax). Heads are instantiated from the template
// with inferred input dims; a global pool is dropped on flat feature vectors.
MultiExitSpec place_exits(const NetworkSpec& net, const std::vector<LayerSpec>& head_template = default_head_template());

// Keep the deepest `n_exit` exits, renumbered 1..n_exit.
MultiExitSpec select_exits(const MultiExitSpec& me, std::size_t n_exit);

// Insert dropout_point layers in front of the `depth` learnable layers closest
// to each exit, walking from the exit toward the input. Existing dropout
// points are removed first, so the operation is idempotent.
MultiExitSpec insert_dropout(const MultiExitSpec& me, const DropoutConfig& cfg, std::size_t depth);

MultiExitSpec strip_dropout(const MultiExitSpec& me);

// Scale hidden widths (dense out_features / conv out_channels of every layer
// except each classifier) by `fraction`, flooring. Throws InvalidArgument if a
// width becomes zero.
NetworkSpec scale_channels(const NetworkSpec& net, double fraction);

// Rebuild the single-exit network exit `exit_pos` computes (trunk prefix + head).
NetworkSpec exit_path_network(const MultiExitSpec& me, std::size_t exit_pos);

struct Diagnostic {
    std::string layer_id;
    std::string message;
    friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

std::vector<Diagnostic> validate(const MultiExitSpec& me);
std::vector<Diagnostic> validate(const NetworkSpec& net);

}  // namespace mebnn
