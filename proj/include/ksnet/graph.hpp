#pragma once

#include <string>
#include <vector>

#include "ksnet/layers.hpp"

namespace ksnet {

/// Opaque handle into a ParameterStore.
struct ParamId {
    int idx = -1;
    bool valid() const { return idx >= 0; }
    friend bool operator==(ParamId a, ParamId b) { return a.idx == b.idx; }
};

enum class LayerKind {
    input,
    conv2d,
    batchnorm2d,
    activation,
    global_avg_pool,
    linear,
    residual_add,
    se_block,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::input: return "input";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm2d: return "batchnorm2d";
        case LayerKind::activation: return "activation";
        case LayerKind::global_avg_pool: return "global_avg_pool";
        case LayerKind::linear: return "linear";
        case LayerKind::residual_add: return "residual_add";
        case LayerKind::se_block: return "se_block";
    }
    return "?";
}

/// Union of the kind-specific hyperparameters; only the fields relevant to
/// the node's kind are meaningful.
struct LayerHyper {
    ConvHyper conv;                    // conv2d
    double eps = 1e-5;                 // batchnorm2d
    double momentum = 0.1;             // batchnorm2d
    ActKind act = ActKind::relu;       // activation
    std::size_t in_features = 0;       // linear
    std::size_t out_features = 0;      // linear
    std::size_t se_ratio = 16;         // se_block
    std::size_t channels = 0;          // batchnorm2d / se_block channel count
};

/// The configuration tuple that decides whether two layers may share a
/// kernel.
struct LayerSignature {
    LayerKind kind = LayerKind::conv2d;
    std::size_t kh = 1, kw = 1;
    std::size_t sh = 1, sw = 1;
    std::size_t ph = 0, pw = 0;
    std::size_t groups = 1;
    std::size_t in_ch = 0, out_ch = 0;

    friend bool operator==(const LayerSignature&, const LayerSignature&) = default;

    /// Name of the first differing field, or nullptr when equal.
    const char* first_mismatch(const LayerSignature& o) const {
        if (kind != o.kind) return "kind";
        if (kh != o.kh || kw != o.kw) return "kernel size";
        if (sh != o.sh || sw != o.sw) return "stride";
        if (ph != o.ph || pw != o.pw) return "padding";
        if (groups != o.groups) return "groups";
        if (in_ch != o.in_ch) return "input channels";
        if (out_ch != o.out_ch) return "output channels";
        return nullptr;
    }

    std::string str() const {
        return msg(layer_kind_name(kind), " k=", kh, "x", kw, " s=", sh, "x", sw, " p=", ph, "x",
                   pw, " g=", groups, " ", in_ch, "->", out_ch);
    }
};

/// One layer instance in the network graph. param_ids order per kind:
///   conv2d [weight, bias]; batchnorm2d [gamma, beta, running_mean,
///   running_var]; linear [weight, bias]; se_block [w1, b1, w2, b2].
struct LayerNode {
    LayerKind kind = LayerKind::input;
    LayerHyper hyper;
    std::vector<int> inputs;       // producer node indices
    std::vector<ParamId> param_ids;
    int layer_index = -1;          // position in topological order
    std::string name;

    /// Leading param_ids that are trainable (the rest are running stats).
    std::size_t trainable_slots() const {
        switch (kind) {
            case LayerKind::conv2d:
            case LayerKind::linear: return 2;
            case LayerKind::batchnorm2d: return 2;
            case LayerKind::se_block: return 4;
            default: return 0;
        }
    }

    LayerSignature signature() const {
        LayerSignature s;
        s.kind = kind;
        if (kind == LayerKind::conv2d) {
            s.kh = hyper.conv.geom.kh;
            s.kw = hyper.conv.geom.kw;
            s.sh = hyper.conv.geom.sh;
            s.sw = hyper.conv.geom.sw;
            s.ph = hyper.conv.geom.ph;
            s.pw = hyper.conv.geom.pw;
            s.groups = hyper.conv.groups;
            s.in_ch = hyper.conv.in_ch;
            s.out_ch = hyper.conv.out_ch;
        } else if (kind == LayerKind::linear) {
            s.in_ch = hyper.in_features;
            s.out_ch = hyper.out_features;
        } else if (kind == LayerKind::batchnorm2d || kind == LayerKind::se_block) {
            s.in_ch = s.out_ch = hyper.channels;
        }
        return s;
    }
};

/// Static layer graph in topological order. Node 0 is the input.
struct Graph {
    std::vector<LayerNode> nodes;
    std::size_t in_ch = 3, in_h = 32, in_w = 32;
    std::size_t num_classes = 10;

    int add(LayerNode node) {
        node.layer_index = static_cast<int>(nodes.size());
        for (int in : node.inputs)
            KSNET_CHECK(in >= 0 && in < node.layer_index, Error, "graph: node '", node.name,
                        "' references out-of-order input ", in);
        nodes.push_back(std::move(node));
        return nodes.back().layer_index;
    }

    const LayerNode& at(int i) const { return nodes.at(static_cast<std::size_t>(i)); }
    LayerNode& at(int i) { return nodes.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return nodes.size(); }
};

/// Activation geometry of one node, from a batch-independent shape walk.
struct NodeShape {
    bool spatial = true;          // (C,H,W) if true, else flat (F)
    std::size_t c = 0, h = 0, w = 0;
    std::size_t features = 0;
};

/// Infers per-node output geometry by pure integer arithmetic (no tensors).
inline std::vector<NodeShape> infer_shapes(const Graph& g) {
    std::vector<NodeShape> shapes(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const LayerNode& n = g.nodes[i];
        NodeShape s;
        switch (n.kind) {
            case LayerKind::input:
                s = {true, g.in_ch, g.in_h, g.in_w, 0};
                break;
            case LayerKind::conv2d: {
                const NodeShape& in = shapes[n.inputs.at(0)];
                KSNET_CHECK(in.spatial && in.c == n.hyper.conv.in_ch, ShapeError, "node '", n.name,
                            "': expects ", n.hyper.conv.in_ch, " channels, got ", in.c);
                s = {true, n.hyper.conv.out_ch, n.hyper.conv.geom.out_h(in.h),
                     n.hyper.conv.geom.out_w(in.w), 0};
                break;
            }
            case LayerKind::batchnorm2d:
            case LayerKind::activation:
            case LayerKind::se_block:
                s = shapes[n.inputs.at(0)];
                break;
            case LayerKind::residual_add: {
                const NodeShape& a = shapes[n.inputs.at(0)];
                const NodeShape& b = shapes[n.inputs.at(1)];
                KSNET_CHECK(a.spatial == b.spatial && a.c == b.c && a.h == b.h && a.w == b.w,
                            ShapeError, "node '", n.name, "': residual branch shapes differ");
                s = a;
                break;
            }
            case LayerKind::global_avg_pool: {
                const NodeShape& in = shapes[n.inputs.at(0)];
                s = {false, 0, 0, 0, in.c};
                break;
            }
            case LayerKind::linear:
                s = {false, 0, 0, 0, n.hyper.out_features};
                break;
        }
        shapes[i] = s;
    }
    return shapes;
}

}  // namespace ksnet
