#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ksnet/network.hpp"

namespace ksnet {

enum class Family { convmixer, se_resnet };

/// ConvMixer sharing granularity: all depthwise + all pointwise sites as two
/// groups, halves as four, quarters as eight.
enum class SharingPreset { none, two_kernel, four_kernel, eight_kernel };

inline const char* preset_name(SharingPreset p) {
    switch (p) {
        case SharingPreset::none: return "none";
        case SharingPreset::two_kernel: return "two_kernel";
        case SharingPreset::four_kernel: return "four_kernel";
        case SharingPreset::eight_kernel: return "eight_kernel";
    }
    return "?";
}

struct ModelConfig {
    Family family = Family::convmixer;

    // convmixer
    std::size_t channels = 256;
    std::size_t patch_size = 1;
    std::size_t dw_kernel = 9;
    SharingPreset preset = SharingPreset::none;
    ActKind act = ActKind::gelu;

    // se_resnet
    std::array<std::size_t, 3> stage_channels{64, 128, 256};
    std::vector<int> shared_stages;  // subset of {1,2,3}
    std::size_t se_ratio = 16;

    std::size_t depth = 8;  // blocks (convmixer) / residual blocks per stage (se_resnet)
    std::size_t num_classes = 10;
    std::size_t in_ch = 3, in_h = 32, in_w = 32;
};

/// Declarative sharing directives: named groups of layer indices. Layers
/// outside every directive get ordinary per-site parameters (singleton
/// groups).
struct SharingPlan {
    struct GroupDirective {
        std::string name;
        std::vector<int> members;  // ascending layer indices
    };
    std::vector<GroupDirective> groups;
};

namespace detail {

inline LayerNode conv_node(std::string name, int input, std::size_t in_ch, std::size_t out_ch,
                           std::size_t k, std::size_t stride, std::size_t pad,
                           std::size_t groups) {
    LayerNode n;
    n.kind = LayerKind::conv2d;
    n.name = std::move(name);
    n.inputs = {input};
    n.hyper.conv.geom = ConvGeom{k, k, stride, stride, pad, pad};
    n.hyper.conv.groups = groups;
    n.hyper.conv.in_ch = in_ch;
    n.hyper.conv.out_ch = out_ch;
    return n;
}

inline LayerNode bn_node(std::string name, int input, std::size_t channels) {
    LayerNode n;
    n.kind = LayerKind::batchnorm2d;
    n.name = std::move(name);
    n.inputs = {input};
    n.hyper.channels = channels;
    return n;
}

inline LayerNode act_node(std::string name, int input, ActKind kind) {
    LayerNode n;
    n.kind = LayerKind::activation;
    n.name = std::move(name);
    n.inputs = {input};
    n.hyper.act = kind;
    return n;
}

}  // namespace detail

/// Patch-embedding conv, then `depth` blocks of
///   depthwise conv + act + BN + residual add, pointwise conv + act + BN,
/// then global average pool and a linear classifier. Spatial resolution is
/// constant through all blocks.
inline std::pair<Graph, SharingPlan> build_convmixer(const ModelConfig& cfg) {
    KSNET_CHECK(cfg.family == Family::convmixer, ConfigError, "build_convmixer: wrong family");
    KSNET_CHECK(cfg.channels >= 1 && cfg.depth >= 1, ConfigError,
                "convmixer: channels and depth must be positive");
    KSNET_CHECK(cfg.patch_size >= 1 && cfg.in_h % cfg.patch_size == 0 &&
                    cfg.in_w % cfg.patch_size == 0,
                ConfigError, "convmixer: patch size ", cfg.patch_size, " must divide input ",
                cfg.in_h, "x", cfg.in_w);
    KSNET_CHECK(cfg.dw_kernel % 2 == 1, ConfigError,
                "convmixer: depthwise kernel must be odd for same-padding, got ", cfg.dw_kernel);
    std::size_t n_chunks = 1;
    switch (cfg.preset) {
        case SharingPreset::none: n_chunks = 0; break;
        case SharingPreset::two_kernel: n_chunks = 1; break;
        case SharingPreset::four_kernel:
            KSNET_CHECK(cfg.depth % 2 == 0, ConfigError,
                        "convmixer: four_kernel needs depth divisible by 2, got ", cfg.depth);
            n_chunks = 2;
            break;
        case SharingPreset::eight_kernel:
            KSNET_CHECK(cfg.depth % 4 == 0, ConfigError,
                        "convmixer: eight_kernel needs depth divisible by 4, got ", cfg.depth);
            n_chunks = 4;
            break;
    }

    Graph g;
    g.in_ch = cfg.in_ch;
    g.in_h = cfg.in_h;
    g.in_w = cfg.in_w;
    g.num_classes = cfg.num_classes;
    g.add(LayerNode{.kind = LayerKind::input, .name = "input"});

    const std::size_t C = cfg.channels;
    int cur = g.add(detail::conv_node("patch.conv", 0, cfg.in_ch, C, cfg.patch_size,
                                      cfg.patch_size, 0, 1));
    cur = g.add(detail::act_node("patch.act", cur, cfg.act));
    cur = g.add(detail::bn_node("patch.bn", cur, C));

    std::vector<int> dw_sites, pw_sites;
    for (std::size_t b = 0; b < cfg.depth; ++b) {
        const std::string p = msg("block", b, ".");
        const int block_in = cur;
        int dw = g.add(detail::conv_node(p + "dw", cur, C, C, cfg.dw_kernel, 1,
                                         cfg.dw_kernel / 2, C));
        dw_sites.push_back(dw);
        cur = g.add(detail::act_node(p + "dw_act", dw, cfg.act));
        cur = g.add(detail::bn_node(p + "dw_bn", cur, C));
        LayerNode addn;
        addn.kind = LayerKind::residual_add;
        addn.name = p + "add";
        addn.inputs = {cur, block_in};
        cur = g.add(std::move(addn));
        int pw = g.add(detail::conv_node(p + "pw", cur, C, C, 1, 1, 0, 1));
        pw_sites.push_back(pw);
        cur = g.add(detail::act_node(p + "pw_act", pw, cfg.act));
        cur = g.add(detail::bn_node(p + "pw_bn", cur, C));
    }

    LayerNode pool;
    pool.kind = LayerKind::global_avg_pool;
    pool.name = "pool";
    pool.inputs = {cur};
    cur = g.add(std::move(pool));
    LayerNode fc;
    fc.kind = LayerKind::linear;
    fc.name = "classifier";
    fc.inputs = {cur};
    fc.hyper.in_features = C;
    fc.hyper.out_features = cfg.num_classes;
    g.add(std::move(fc));

    SharingPlan plan;
    if (n_chunks > 0) {
        const std::size_t chunk = cfg.depth / n_chunks;
        for (std::size_t c = 0; c < n_chunks; ++c) {
            SharingPlan::GroupDirective dw{msg("shared.dw.g", c), {}};
            SharingPlan::GroupDirective pw{msg("shared.pw.g", c), {}};
            for (std::size_t b = c * chunk; b < (c + 1) * chunk; ++b) {
                dw.members.push_back(dw_sites[b]);
                pw.members.push_back(pw_sites[b]);
            }
            plan.groups.push_back(std::move(dw));
            plan.groups.push_back(std::move(pw));
        }
    }
    return {std::move(g), std::move(plan)};
}

/// Stem conv + three stages of basic residual blocks (two 3x3 convs, BN and
/// relu, an SE gate before the residual add). The first block of stages 2
/// and 3 downsamples with stride 2 and a 1x1 projection shortcut. A stage's
/// sharing group holds every 3x3 conv with Cin==Cout==stage channels and
/// stride 1; stage-entry convs and projections stay per-site.
inline std::pair<Graph, SharingPlan> build_seresnet(const ModelConfig& cfg) {
    KSNET_CHECK(cfg.family == Family::se_resnet, ConfigError, "build_seresnet: wrong family");
    KSNET_CHECK(cfg.depth >= 1, ConfigError, "se_resnet: depth per stage must be >= 1, got ",
                cfg.depth);
    for (int s : cfg.shared_stages)
        KSNET_CHECK(s >= 1 && s <= 3, ConfigError, "se_resnet: shared stage ", s,
                    " out of range 1..3");
    for (std::size_t s = 0; s < 3; ++s)
        KSNET_CHECK(cfg.stage_channels[s] % cfg.se_ratio == 0, Error, "se_resnet: stage ", s + 1,
                    " channels ", cfg.stage_channels[s], " not divisible by SE ratio ",
                    cfg.se_ratio);

    Graph g;
    g.in_ch = cfg.in_ch;
    g.in_h = cfg.in_h;
    g.in_w = cfg.in_w;
    g.num_classes = cfg.num_classes;
    g.add(LayerNode{.kind = LayerKind::input, .name = "input"});

    int cur = g.add(detail::conv_node("stem.conv", 0, cfg.in_ch, cfg.stage_channels[0], 3, 1, 1, 1));
    cur = g.add(detail::bn_node("stem.bn", cur, cfg.stage_channels[0]));
    cur = g.add(detail::act_node("stem.act", cur, ActKind::relu));

    std::array<std::vector<int>, 3> stage_iso_sites;
    std::size_t prev_ch = cfg.stage_channels[0];
    for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t ch = cfg.stage_channels[s];
        for (std::size_t b = 0; b < cfg.depth; ++b) {
            const std::string p = msg("stage", s + 1, ".block", b, ".");
            const int block_in = cur;
            const std::size_t in_ch = (b == 0) ? prev_ch : ch;
            const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;

            int c1 = g.add(detail::conv_node(p + "conv1", cur, in_ch, ch, 3, stride, 1, 1));
            if (in_ch == ch && stride == 1) stage_iso_sites[s].push_back(c1);
            cur = g.add(detail::bn_node(p + "bn1", c1, ch));
            cur = g.add(detail::act_node(p + "act1", cur, ActKind::relu));
            int c2 = g.add(detail::conv_node(p + "conv2", cur, ch, ch, 3, 1, 1, 1));
            stage_iso_sites[s].push_back(c2);
            cur = g.add(detail::bn_node(p + "bn2", c2, ch));

            LayerNode se;
            se.kind = LayerKind::se_block;
            se.name = p + "se";
            se.inputs = {cur};
            se.hyper.channels = ch;
            se.hyper.se_ratio = cfg.se_ratio;
            cur = g.add(std::move(se));

            int shortcut = block_in;
            if (in_ch != ch || stride != 1) {
                shortcut =
                    g.add(detail::conv_node(p + "proj", block_in, in_ch, ch, 1, stride, 0, 1));
                shortcut = g.add(detail::bn_node(p + "proj_bn", shortcut, ch));
            }
            LayerNode addn;
            addn.kind = LayerKind::residual_add;
            addn.name = p + "add";
            addn.inputs = {cur, shortcut};
            cur = g.add(std::move(addn));
            cur = g.add(detail::act_node(p + "act2", cur, ActKind::relu));
        }
        prev_ch = ch;
    }

    LayerNode pool;
    pool.kind = LayerKind::global_avg_pool;
    pool.name = "pool";
    pool.inputs = {cur};
    cur = g.add(std::move(pool));
    LayerNode fc;
    fc.kind = LayerKind::linear;
    fc.name = "classifier";
    fc.inputs = {cur};
    fc.hyper.in_features = cfg.stage_channels[2];
    fc.hyper.out_features = cfg.num_classes;
    g.add(std::move(fc));

    SharingPlan plan;
    for (int s : cfg.shared_stages) {
        SharingPlan::GroupDirective d{msg("stage", s, ".shared"),
                                      stage_iso_sites[static_cast<std::size_t>(s - 1)]};
        plan.groups.push_back(std::move(d));
    }
    return {std::move(g), std::move(plan)};
}

inline std::pair<Graph, SharingPlan> build_graph(const ModelConfig& cfg) {
    return cfg.family == Family::convmixer ? build_convmixer(cfg) : build_seresnet(cfg);
}

/// Validates a grouping directive against the graph and returns the plan.
/// Layers outside any directive become singleton groups. Isomorphism is
/// checked here (and again at bind time).
inline SharingPlan derive_sharing_plan(const Graph& g,
                                       const std::vector<SharingPlan::GroupDirective>& directives) {
    std::map<int, std::string> owner;
    SharingPlan plan;
    for (const auto& d : directives) {
        KSNET_CHECK(!d.members.empty(), Error, "sharing directive '", d.name, "' has no members");
        for (int m : d.members) {
            KSNET_CHECK(m >= 0 && m < static_cast<int>(g.size()), Error, "sharing directive '",
                        d.name, "': layer index ", m, " does not exist");
            auto [it, inserted] = owner.emplace(m, d.name);
            KSNET_CHECK(inserted, Error, "layer ", m, " appears in groups '", it->second,
                        "' and '", d.name, "'");
        }
        const LayerNode& first = g.at(d.members.front());
        KSNET_CHECK(first.kind != LayerKind::batchnorm2d, SharedBatchNormError,
                    "sharing directive '", d.name, "' targets batch normalization layer '",
                    first.name, "'");
        KSNET_CHECK(first.kind == LayerKind::conv2d, IsomorphismError, "sharing directive '",
                    d.name, "': kind ", layer_kind_name(first.kind), " is not a shareable kernel");
        const LayerSignature sig = first.signature();
        for (int m : d.members) {
            const LayerNode& node = g.at(m);
            KSNET_CHECK(node.kind != LayerKind::batchnorm2d, SharedBatchNormError,
                        "sharing directive '", d.name, "': member ", m,
                        " is a batch normalization layer");
            if (const char* field = sig.first_mismatch(node.signature()))
                throw IsomorphismError(msg("sharing directive '", d.name, "': member ", m, " ('",
                                           node.name, "') differs in ", field));
        }
        plan.groups.push_back(d);
    }
    return plan;
}

/// Allocates parameters for every node: plan groups get one kernel bound at
/// all member sites, everything else gets per-site parameters. Walk order is
/// ascending node index, so allocation (and therefore initialization) is
/// deterministic.
template <Scalar T>
void bind_params(Graph& g, const SharingPlan& plan, ParameterStore<T>& store) {
    std::map<int, const SharingPlan::GroupDirective*> site_group;
    for (const auto& d : plan.groups) {
        for (int m : d.members) {
            auto [it, inserted] = site_group.emplace(m, &d);
            KSNET_CHECK(inserted, Error, "layer ", m, " appears in two sharing groups ('",
                        it->second->name, "', '", d.name, "')");
        }
    }

    for (std::size_t i = 0; i < g.size(); ++i) {
        LayerNode& n = g.nodes[i];
        auto git = site_group.find(static_cast<int>(i));
        if (git != site_group.end()) {
            if (!n.param_ids.empty()) continue;  // bound when the group was created
            const auto& d = *git->second;
            KSNET_CHECK(d.members.front() == static_cast<int>(i), Error, "sharing group '",
                        d.name, "': members not ascending");
            create_group(store, g, d.name, n.signature(), d.members);
            continue;
        }
        switch (n.kind) {
            case LayerKind::conv2d: {
                const ConvHyper& c = n.hyper.conv;
                const std::size_t fan_in = (c.in_ch / c.groups) * c.geom.kh * c.geom.kw;
                ParamId w = store.add(n.name + ".weight",
                                      {c.out_ch, c.in_ch / c.groups, c.geom.kh, c.geom.kw}, true,
                                      true, InitSpec::uniform(detail::fan_in_bound(fan_in)));
                ParamId b = store.add(n.name + ".bias", {c.out_ch}, true, false,
                                      InitSpec::uniform(detail::bias_bound(fan_in)));
                n.param_ids = {w, b};
                break;
            }
            case LayerKind::batchnorm2d: {
                const std::size_t C = n.hyper.channels;
                ParamId gm = store.add(n.name + ".gamma", {C}, true, false, InitSpec::constant(1));
                ParamId bt = store.add(n.name + ".beta", {C}, true, false, InitSpec::constant(0));
                ParamId rm = store.add(n.name + ".running_mean", {C}, false, false,
                                       InitSpec::constant(0));
                ParamId rv = store.add(n.name + ".running_var", {C}, false, false,
                                       InitSpec::constant(1));
                n.param_ids = {gm, bt, rm, rv};
                break;
            }
            case LayerKind::linear: {
                const std::size_t fan_in = n.hyper.in_features;
                ParamId w = store.add(n.name + ".weight", {n.hyper.out_features, fan_in}, true,
                                      true, InitSpec::uniform(detail::fan_in_bound(fan_in)));
                ParamId b = store.add(n.name + ".bias", {n.hyper.out_features}, true, false,
                                      InitSpec::uniform(detail::bias_bound(fan_in)));
                n.param_ids = {w, b};
                break;
            }
            case LayerKind::se_block: {
                const std::size_t C = n.hyper.channels;
                KSNET_CHECK(C % n.hyper.se_ratio == 0, Error, "se_block '", n.name, "': ", C,
                            " channels not divisible by ratio ", n.hyper.se_ratio);
                const std::size_t Cr = C / n.hyper.se_ratio;
                ParamId w1 = store.add(n.name + ".w1", {Cr, C}, true, true,
                                       InitSpec::uniform(detail::fan_in_bound(C)));
                ParamId b1 = store.add(n.name + ".b1", {Cr}, true, false,
                                       InitSpec::uniform(detail::bias_bound(C)));
                ParamId w2 = store.add(n.name + ".w2", {C, Cr}, true, true,
                                       InitSpec::uniform(detail::fan_in_bound(Cr)));
                ParamId b2 = store.add(n.name + ".b2", {C}, true, false,
                                       InitSpec::uniform(detail::bias_bound(Cr)));
                n.param_ids = {w1, b1, w2, b2};
                break;
            }
            default:
                break;
        }
        for (ParamId id : n.param_ids)
            if (store.entry(id).trainable) store.note_binding(id);
    }
}

/// A graph plus its bound, initialized parameter store.
template <Scalar T>
struct Model {
    Graph graph;
    SharingPlan plan;
    ParameterStore<T> store;
};

template <Scalar T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    auto [graph, plan] = build_graph(cfg);
    Model<T> m{std::move(graph), std::move(plan), {}};
    bind_params(m.graph, m.plan, m.store);
    initialize_params(m.store, seed);
    return m;
}

}  // namespace ksnet
