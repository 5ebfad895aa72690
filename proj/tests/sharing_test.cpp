#include <gtest/gtest.h>

#include "ksnet/ksnet.hpp"
#include "oracles.hpp"

using namespace ksnet;

namespace {

ModelConfig tiny_convmixer(std::size_t channels, std::size_t depth, SharingPreset preset,
                           std::size_t classes = 4) {
    ModelConfig cfg;
    cfg.family = Family::convmixer;
    cfg.channels = channels;
    cfg.depth = depth;
    cfg.patch_size = 1;
    cfg.dw_kernel = 9;
    cfg.preset = preset;
    cfg.num_classes = classes;
    cfg.in_h = cfg.in_w = 8;
    return cfg;
}

ModelConfig tiny_seresnet(std::size_t depth, std::vector<int> stages, std::size_t classes = 4) {
    ModelConfig cfg;
    cfg.family = Family::se_resnet;
    cfg.stage_channels = {8, 16, 32};
    cfg.depth = depth;
    cfg.shared_stages = std::move(stages);
    cfg.se_ratio = 4;
    cfg.num_classes = classes;
    cfg.in_h = cfg.in_w = 8;
    return cfg;
}

TEST(CreateGroup, SharedKernelCountedOnce) {
    // 20 depthwise sites of ConvMixer-384/20 collapse to one kernel.
    ModelConfig base;
    base.family = Family::convmixer;
    base.channels = 384;
    base.depth = 20;
    base.preset = SharingPreset::none;
    auto baseline = build_model<float>(base, 1);
    base.preset = SharingPreset::two_kernel;
    auto shared = build_model<float>(base, 1);

    const long long dw_weight = 384 * 81;
    const long long per_block_dw_kernel = dw_weight + 384;  // + bias
    const long long pw_kernel = 384LL * 384 + 384;
    const long long expected_drop = 19 * (per_block_dw_kernel + pw_kernel);
    EXPECT_EQ(baseline.store.trainable_parameter_count() -
                  shared.store.trainable_parameter_count(),
              expected_drop);
    EXPECT_EQ(shared.store.trainable_parameter_count(), 216202);
    ASSERT_EQ(shared.store.groups().size(), 2u);
    EXPECT_EQ(shared.store.groups()[0].member_sites.size(), 20u);
    EXPECT_EQ(shared.store.value(shared.store.groups()[0].kernel_param_ids[0]).numel(),
              static_cast<std::size_t>(dw_weight));
}

TEST(CreateGroup, GroupOfOneEqualsUnshared) {
    auto a = build_model<float>(tiny_convmixer(8, 1, SharingPreset::none), 3);
    auto b = build_model<float>(tiny_convmixer(8, 1, SharingPreset::two_kernel), 3);
    EXPECT_EQ(a.store.trainable_parameter_count(), b.store.trainable_parameter_count());
}

TEST(CreateGroup, NonIsomorphicMembersRejected) {
    // 64->64 conv vs 64->128 conv.
    Graph g;
    g.add(LayerNode{.kind = LayerKind::input, .name = "input"});
    int a = g.add(detail::conv_node("a", 0, 64, 64, 3, 1, 1, 1));
    LayerNode n = detail::conv_node("b", a, 64, 128, 3, 1, 1, 1);
    int b = g.add(std::move(n));
    ParameterStore<float> store;
    try {
        create_group(store, g, "bad", g.at(a).signature(), {a, b});
        FAIL() << "expected IsomorphismError";
    } catch (const IsomorphismError& e) {
        EXPECT_NE(std::string(e.what()).find("output channels"), std::string::npos);
    }
}

TEST(CreateGroup, EveryMismatchingFieldIsNamed) {
    Graph g;
    g.add(LayerNode{.kind = LayerKind::input, .name = "input"});
    int ref = g.add(detail::conv_node("ref", 0, 8, 8, 3, 1, 1, 1));
    struct Case {
        LayerNode node;
        const char* field;
    };
    std::vector<Case> cases;
    cases.push_back({detail::conv_node("k", ref, 8, 8, 5, 1, 2, 1), "kernel size"});
    cases.push_back({detail::conv_node("s", ref, 8, 8, 3, 2, 1, 1), "stride"});
    cases.push_back({detail::conv_node("p", ref, 8, 8, 3, 1, 0, 1), "padding"});
    cases.push_back({detail::conv_node("g", ref, 8, 8, 3, 1, 1, 8), "groups"});
    for (auto& c : cases) {
        Graph g2 = g;
        int other = g2.add(c.node);
        ParameterStore<float> store;
        try {
            create_group(store, g2, "bad", g2.at(ref).signature(), {ref, other});
            FAIL() << "expected IsomorphismError for " << c.field;
        } catch (const IsomorphismError& e) {
            EXPECT_NE(std::string(e.what()).find(c.field), std::string::npos) << e.what();
        }
    }
}

TEST(CreateGroup, BatchNormMembersRejected) {
    Graph g;
    g.add(LayerNode{.kind = LayerKind::input, .name = "input"});
    int c = g.add(detail::conv_node("c", 0, 4, 4, 3, 1, 1, 1));
    int bn1 = g.add(detail::bn_node("bn1", c, 4));
    int bn2 = g.add(detail::bn_node("bn2", bn1, 4));
    ParameterStore<float> store;
    EXPECT_THROW(create_group(store, g, "bn_share", g.at(bn1).signature(), {bn1, bn2}),
                 SharedBatchNormError);
}

TEST(Accumulate, CancellationAndScaling) {
    Graph g;
    g.add(LayerNode{.kind = LayerKind::input, .name = "input"});
    std::vector<int> sites;
    int cur = 0;
    for (int i = 0; i < 4; ++i) {
        cur = g.add(detail::conv_node(msg("c", i), cur, 3, 3, 3, 1, 1, 1));
        sites.push_back(cur);
    }
    ParameterStore<double> store;
    const SharingGroup& group = create_group(store, g, "grp", g.at(sites[0]).signature(), sites);
    const ParamId w = group.kernel_param_ids[0];

    Rng rng(9);
    Tensor<double> G(store.value(w).shape());
    fill_uniform(G, rng, 1.0);

    // Two sites with G and -G cancel exactly.
    {
        Graph g2;
        g2.add(LayerNode{.kind = LayerKind::input, .name = "input"});
        int s1 = g2.add(detail::conv_node("c0", 0, 3, 3, 3, 1, 1, 1));
        int s2 = g2.add(detail::conv_node("c1", s1, 3, 3, 3, 1, 1, 1));
        ParameterStore<double> st2;
        const SharingGroup& pair = create_group(st2, g2, "pair", g2.at(s1).signature(), {s1, s2});
        std::map<int, Tensor<double>> grads;
        grads.emplace(s1, G);
        grads.emplace(s2, scale(G, -1.0));
        accumulate_shared_gradients(st2, pair, grads);
        EXPECT_EQ(oracles::max_abs_diff(st2.grad(pair.kernel_param_ids[0]),
                                        Tensor<double>(G.shape(), 0.0)),
                  0.0);
    }

    // n sites with identical G give n*G.
    std::map<int, Tensor<double>> grads;
    for (int s : sites) grads.emplace(s, G);
    accumulate_shared_gradients(store, group, grads);
    EXPECT_LE(oracles::max_abs_diff(store.grad(w), scale(G, 4.0)), 1e-15);

    // Missing site gradient is an error.
    store.zero_grads();
    grads.erase(sites[1]);
    EXPECT_THROW(accumulate_shared_gradients(store, group, grads), Error);
}

// The central equivalence: a fully shared tiny network's accumulated kernel
// gradient equals the summed per-site gradients of a tied unshared clone.
TEST(Sharing, Eq1EquivalenceTiedClone) {
    auto res = oracles::eq1_equivalence<double>(tiny_convmixer(8, 3, SharingPreset::two_kernel),
                                                101, 2);
    EXPECT_TRUE(res.forward_bitwise_equal);
    EXPECT_LE(res.worst_rel_err, 1e-10);
}

// Quantified over depths and both conv species (depthwise + pointwise
// groups are both present in every ConvMixer plan).
TEST(Sharing, Eq1EquivalenceAcrossDepths) {
    for (std::size_t depth : {2u, 3u, 5u}) {
        auto res = oracles::eq1_equivalence<double>(
            tiny_convmixer(8, depth, SharingPreset::two_kernel), 200 + depth, 2);
        EXPECT_TRUE(res.forward_bitwise_equal) << "depth " << depth;
        EXPECT_LE(res.worst_rel_err, 1e-10) << "depth " << depth;
    }
}

TEST(Sharing, Eq1EquivalenceSeResNet) {
    auto res = oracles::eq1_equivalence<double>(tiny_seresnet(2, {1, 2, 3}), 77, 2);
    EXPECT_TRUE(res.forward_bitwise_equal);
    EXPECT_LE(res.worst_rel_err, 1e-10);
}

TEST(StoreOps, ZeroGradsClearsEverything) {
    auto model = build_model<double>(tiny_convmixer(8, 2, SharingPreset::two_kernel), 5);
    Dataset<double> ds = synthetic_dataset<double>(6, 4, 4, 8, 8);
    Tensor<double> images({2, 3, 8, 8});
    std::copy(ds.images.data(), ds.images.data() + images.numel(), images.data());
    std::vector<int> labels{ds.labels[0], ds.labels[1]};
    Trace<double> tr;
    auto logits = forward(model.graph, model.store, images, ForwardOpts<double>{true, true}, &tr);
    auto loss = softmax_xent(logits, labels);
    auto bw = backward(model.graph, model.store, tr, loss.grad_logits);
    zero_grads(model.store);
    accumulate_site_gradients(model.store, model.graph, bw.site_grads);
    step_ready(model.store);

    zero_grads(model.store);
    model.store.for_each([&](ParamId, const ParamEntry<double>& e) {
        for (std::size_t i = 0; i < e.grad.numel(); ++i) ASSERT_EQ(e.grad[i], 0.0);
        EXPECT_EQ(e.contribs, 0);
    });
}

TEST(StoreOps, StepReadyCatchesUntouchedParameter) {
    auto model = build_model<double>(tiny_convmixer(8, 2, SharingPreset::none), 5);
    zero_grads(model.store);
    try {
        step_ready(model.store);
        FAIL() << "expected error for untouched parameters";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("step_ready"), std::string::npos);
    }
}

TEST(StoreOps, SharedKernelGetsExactlyGroupSizeContributions) {
    auto model = build_model<double>(tiny_convmixer(8, 4, SharingPreset::two_kernel), 5);
    Dataset<double> ds = synthetic_dataset<double>(8, 4, 4, 8, 8);
    Tensor<double> images({2, 3, 8, 8});
    std::copy(ds.images.data(), ds.images.data() + images.numel(), images.data());
    std::vector<int> labels{ds.labels[0], ds.labels[1]};
    Trace<double> tr;
    auto logits = forward(model.graph, model.store, images, ForwardOpts<double>{true, true}, &tr);
    auto loss = softmax_xent(logits, labels);
    auto bw = backward(model.graph, model.store, tr, loss.grad_logits);
    zero_grads(model.store);
    accumulate_site_gradients(model.store, model.graph, bw.site_grads);
    step_ready(model.store);

    ASSERT_EQ(model.store.groups().size(), 2u);
    for (const auto& group : model.store.groups()) {
        EXPECT_EQ(group.member_sites.size(), 4u);
        for (ParamId id : group.kernel_param_ids)
            EXPECT_EQ(model.store.entry(id).contribs, 4);
    }
    // Per-site parameters got exactly one contribution each.
    model.store.for_each([&](ParamId, const ParamEntry<double>& e) {
        if (e.trainable) EXPECT_EQ(e.contribs, e.expected_contribs);
    });
}

TEST(StoreOps, TrainableParameterCountExamples) {
    ParameterStore<float> empty;
    EXPECT_EQ(trainable_parameter_count(empty), 0);

    ModelConfig cfg;
    cfg.family = Family::convmixer;
    cfg.channels = 384;
    cfg.depth = 20;
    cfg.preset = SharingPreset::two_kernel;
    EXPECT_EQ(build_model<float>(cfg, 1).store.trainable_parameter_count(), 216202);

    cfg.channels = 128;
    cfg.depth = 8;
    cfg.preset = SharingPreset::none;
    EXPECT_EQ(build_model<float>(cfg, 1).store.trainable_parameter_count(), 222218);
}

// Forward equivalence: shared forward output is bitwise identical to the
// tied clone, across presets.
TEST(Sharing, ForwardBitwiseEquivalenceAcrossPresets) {
    for (SharingPreset preset : {SharingPreset::two_kernel, SharingPreset::four_kernel,
                                 SharingPreset::eight_kernel}) {
        auto cfg = tiny_convmixer(8, 4, preset);
        auto shared = build_model<float>(cfg, 31);
        auto clone = oracles::tied_clone<float>(cfg, shared, 32);
        Dataset<float> ds = synthetic_dataset<float>(33, 4, 4, 8, 8);
        ForwardOpts<float> opts{false, false};
        auto a = forward(shared.graph, shared.store, ds.images, opts);
        auto b = forward(clone.graph, clone.store, ds.images, opts);
        EXPECT_TRUE(oracles::bitwise_equal(a, b)) << preset_name(preset);
    }
}

TEST(Sharing, ParameterCountStrictlyDecreasesWithMembership) {
    // Growing a group's membership (deeper model, same number of groups)
    // adds only per-site BN parameters; the kernel side stays constant, so
    // shared < unshared strictly, and the gap widens with depth.
    std::vector<long long> shared_counts, baseline_counts;
    for (std::size_t depth : {2u, 4u, 8u}) {
        shared_counts.push_back(
            build_model<float>(tiny_convmixer(8, depth, SharingPreset::two_kernel), 1)
                .store.trainable_parameter_count());
        baseline_counts.push_back(
            build_model<float>(tiny_convmixer(8, depth, SharingPreset::none), 1)
                .store.trainable_parameter_count());
    }
    for (std::size_t i = 0; i < shared_counts.size(); ++i)
        EXPECT_LT(shared_counts[i], baseline_counts[i]);
    EXPECT_LT(baseline_counts[1] - shared_counts[1], baseline_counts[2] - shared_counts[2]);
}

TEST(Sharing, PlansSharingBatchNormAreRejected) {
    auto [graph, plan] = build_convmixer(tiny_convmixer(8, 2, SharingPreset::none));
    // Find two BN nodes and try to group them via a directive.
    std::vector<int> bns;
    for (const auto& n : graph.nodes)
        if (n.kind == LayerKind::batchnorm2d) bns.push_back(n.layer_index);
    ASSERT_GE(bns.size(), 2u);
    EXPECT_THROW(derive_sharing_plan(graph, {{"bn", {bns[0], bns[1]}}}), SharedBatchNormError);
}

}  // namespace
