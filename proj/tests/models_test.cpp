#include <gtest/gtest.h>

#include "ksnet/accounting.hpp"
#include "ksnet/ksnet.hpp"
#include "oracles.hpp"

using namespace ksnet;

namespace {

ModelConfig convmixer_cfg(std::size_t channels, std::size_t depth, SharingPreset preset) {
    ModelConfig cfg;
    cfg.family = Family::convmixer;
    cfg.channels = channels;
    cfg.depth = depth;
    cfg.preset = preset;
    return cfg;
}

ModelConfig seresnet_cfg(std::size_t depth, std::vector<int> stages) {
    ModelConfig cfg;
    cfg.family = Family::se_resnet;
    cfg.depth = depth;
    cfg.shared_stages = std::move(stages);
    return cfg;
}

TEST(BuildConvMixer, PresetGroupCounts) {
    {
        auto [g, plan] = build_convmixer(convmixer_cfg(384, 20, SharingPreset::two_kernel));
        ASSERT_EQ(plan.groups.size(), 2u);
        EXPECT_EQ(plan.groups[0].members.size(), 20u);
        EXPECT_EQ(plan.groups[1].members.size(), 20u);
    }
    {
        auto [g, plan] = build_convmixer(convmixer_cfg(384, 20, SharingPreset::eight_kernel));
        ASSERT_EQ(plan.groups.size(), 8u);
        for (const auto& d : plan.groups) EXPECT_EQ(d.members.size(), 5u);
    }
    {
        auto [g, plan] = build_convmixer(convmixer_cfg(384, 20, SharingPreset::four_kernel));
        ASSERT_EQ(plan.groups.size(), 4u);
        for (const auto& d : plan.groups) EXPECT_EQ(d.members.size(), 10u);
    }
    {
        auto [g, plan] = build_convmixer(convmixer_cfg(384, 20, SharingPreset::none));
        EXPECT_TRUE(plan.groups.empty());
    }
}

TEST(BuildConvMixer, PresetNoneMatchesBaselineCount) {
    auto a = build_model<float>(convmixer_cfg(64, 4, SharingPreset::none), 1);
    EXPECT_EQ(count_params(a.graph, a.plan), a.store.trainable_parameter_count());
}

TEST(BuildConvMixer, DivisibilityViolationsFail) {
    EXPECT_THROW(build_convmixer(convmixer_cfg(64, 5, SharingPreset::four_kernel)), ConfigError);
    EXPECT_THROW(build_convmixer(convmixer_cfg(64, 6, SharingPreset::eight_kernel)), ConfigError);
    ModelConfig cfg = convmixer_cfg(64, 4, SharingPreset::none);
    cfg.patch_size = 5;  // does not divide 32
    EXPECT_THROW(build_convmixer(cfg), ConfigError);
    cfg = convmixer_cfg(64, 4, SharingPreset::none);
    cfg.dw_kernel = 8;  // even kernels break same-padding
    EXPECT_THROW(build_convmixer(cfg), ConfigError);
    cfg = convmixer_cfg(64, 0, SharingPreset::none);
    EXPECT_THROW(build_convmixer(cfg), ConfigError);
}

TEST(BuildConvMixer, OutputShapeAndConstantResolution) {
    for (std::size_t patch : {1u, 2u, 4u}) {
        ModelConfig cfg = convmixer_cfg(16, 3, SharingPreset::none);
        cfg.patch_size = patch;
        auto model = build_model<float>(cfg, 2);
        auto shapes = infer_shapes(model.graph);
        const std::size_t expected = 32 / patch;
        for (const auto& n : model.graph.nodes) {
            const auto& s = shapes[static_cast<std::size_t>(n.layer_index)];
            if (n.kind == LayerKind::conv2d && n.name != "patch.conv") {
                EXPECT_EQ(s.h, expected);
                EXPECT_EQ(s.w, expected);
            }
        }
        Dataset<float> ds = synthetic_dataset<float>(3, 4, 4, 32, 32);
        auto logits = forward(model.graph, model.store, ds.images, ForwardOpts<float>{false, false});
        EXPECT_EQ(logits.shape(), (std::vector<std::size_t>{4, cfg.num_classes}));
    }
}

TEST(BuildSeResNet, StageGeometries) {
    auto model = build_model<float>(seresnet_cfg(2, {}), 1);
    auto shapes = infer_shapes(model.graph);
    // Last node of each stage: find by name.
    for (const auto& n : model.graph.nodes) {
        const auto& s = shapes[static_cast<std::size_t>(n.layer_index)];
        if (n.name == "stage1.block1.act2") {
            EXPECT_EQ(s.c, 64u);
            EXPECT_EQ(s.h, 32u);
        } else if (n.name == "stage2.block1.act2") {
            EXPECT_EQ(s.c, 128u);
            EXPECT_EQ(s.h, 16u);
        } else if (n.name == "stage3.block1.act2") {
            EXPECT_EQ(s.c, 256u);
            EXPECT_EQ(s.h, 8u);
        }
    }
}

TEST(BuildSeResNet, IsomorphicSiteCountsPerStage) {
    // Stage 1 has 2d isomorphic convs; stages 2 and 3 have 2d-1 (stage-entry
    // convs and projections excluded).
    for (std::size_t d : {2u, 4u, 6u}) {
        auto [g, plan] = build_seresnet(seresnet_cfg(d, {1, 2, 3}));
        ASSERT_EQ(plan.groups.size(), 3u);
        EXPECT_EQ(plan.groups[0].members.size(), 2 * d);
        EXPECT_EQ(plan.groups[1].members.size(), 2 * d - 1);
        EXPECT_EQ(plan.groups[2].members.size(), 2 * d - 1);
    }
}

TEST(BuildSeResNet, ParameterAnchors) {
    EXPECT_EQ(count_params_of(seresnet_cfg(8, {})), 12175594);
    EXPECT_EQ(count_params_of(seresnet_cfg(4, {1, 2, 3})), 1242298);
    EXPECT_EQ(count_params_of(seresnet_cfg(6, {3})), 3150386);
}

TEST(BuildSeResNet, DepthZeroFails) {
    EXPECT_THROW(build_seresnet(seresnet_cfg(0, {})), ConfigError);
    EXPECT_THROW(build_seresnet(seresnet_cfg(2, {4})), ConfigError);
}

TEST(DeriveSharingPlan, TwoGroupsOfTen) {
    auto [g, auto_plan] = build_convmixer(convmixer_cfg(16, 20, SharingPreset::none));
    std::vector<int> dw_sites;
    for (const auto& n : g.nodes)
        if (n.kind == LayerKind::conv2d && n.name.find(".dw") != std::string::npos)
            dw_sites.push_back(n.layer_index);
    ASSERT_EQ(dw_sites.size(), 20u);
    std::vector<int> first(dw_sites.begin(), dw_sites.begin() + 10);
    std::vector<int> second(dw_sites.begin() + 10, dw_sites.end());
    SharingPlan plan = derive_sharing_plan(g, {{"g0", first}, {"g1", second}});
    EXPECT_EQ(plan.groups.size(), 2u);
    EXPECT_EQ(plan.groups[0].members.size(), 10u);

    // Empty directive: all singletons.
    SharingPlan none = derive_sharing_plan(g, {});
    EXPECT_TRUE(none.groups.empty());
}

TEST(DeriveSharingPlan, PartialCoverageSitsBetweenFullAndBaseline) {
    auto [g, unused] = build_convmixer(convmixer_cfg(16, 8, SharingPreset::none));
    std::vector<int> dw_sites;
    for (const auto& n : g.nodes)
        if (n.kind == LayerKind::conv2d && n.name.find(".dw") != std::string::npos)
            dw_sites.push_back(n.layer_index);
    std::vector<int> half(dw_sites.begin(), dw_sites.begin() + 4);
    SharingPlan partial = derive_sharing_plan(g, {{"half", half}});

    auto [g2, full_plan] = build_convmixer(convmixer_cfg(16, 8, SharingPreset::two_kernel));
    const long long baseline = count_params(g, SharingPlan{});
    const long long mixed = count_params(g, partial);
    const long long full = count_params(g2, full_plan);
    EXPECT_LT(full, mixed);
    EXPECT_LT(mixed, baseline);
}

TEST(DeriveSharingPlan, Errors) {
    auto [g, unused] = build_convmixer(convmixer_cfg(16, 4, SharingPreset::none));
    std::vector<int> dw, pw;
    for (const auto& n : g.nodes) {
        if (n.kind != LayerKind::conv2d) continue;
        if (n.name.find(".dw") != std::string::npos) dw.push_back(n.layer_index);
        if (n.name.find(".pw") != std::string::npos) pw.push_back(n.layer_index);
    }
    // Mixing species -> isomorphism error (groups/kernel differ).
    EXPECT_THROW(derive_sharing_plan(g, {{"mix", {dw[0], pw[0]}}}), IsomorphismError);
    // A layer in two groups.
    EXPECT_THROW(derive_sharing_plan(g, {{"a", {dw[0], dw[1]}}, {"b", {dw[1], dw[2]}}}), Error);
    // Nonexistent layer index.
    EXPECT_THROW(derive_sharing_plan(g, {{"a", {9999}}}), Error);
}

TEST(Models, FlopsInvariantUnderSharing) {
    for (SharingPreset preset : {SharingPreset::none, SharingPreset::two_kernel,
                                 SharingPreset::four_kernel, SharingPreset::eight_kernel}) {
        auto [g, plan] = build_convmixer(convmixer_cfg(64, 8, preset));
        EXPECT_EQ(count_flops(g), count_flops(g)) << preset_name(preset);
        auto [gb, pb] = build_convmixer(convmixer_cfg(64, 8, SharingPreset::none));
        EXPECT_EQ(count_flops(g), count_flops(gb)) << preset_name(preset);
    }
    for (const auto& stages : std::vector<std::vector<int>>{{}, {3}, {2, 3}, {1, 2, 3}}) {
        auto [g, plan] = build_seresnet(seresnet_cfg(3, stages));
        auto [gb, pb] = build_seresnet(seresnet_cfg(3, {}));
        EXPECT_EQ(count_flops(g), count_flops(gb));
    }
}

TEST(Models, BuildIsDeterministic) {
    ModelConfig cfg = convmixer_cfg(16, 4, SharingPreset::two_kernel);
    cfg.in_h = cfg.in_w = 8;
    auto a = build_model<float>(cfg, 1234);
    auto b = build_model<float>(cfg, 1234);
    ASSERT_EQ(a.store.size(), b.store.size());
    a.store.for_each([&](ParamId id, const ParamEntry<float>& e) {
        EXPECT_TRUE(oracles::bitwise_equal(e.value, b.store.value(id))) << e.name;
    });
    auto c = build_model<float>(cfg, 1235);
    bool any_diff = false;
    c.store.for_each([&](ParamId id, const ParamEntry<float>& e) {
        if (e.init.kind == InitSpec::Kind::uniform &&
            !oracles::bitwise_equal(e.value, a.store.value(id)))
            any_diff = true;
    });
    EXPECT_TRUE(any_diff);
}

private_decl:  // silence unused-label warnings if sections move
TEST(Models, SeRatioMustDivideChannels) {
    ModelConfig cfg = seresnet_cfg(2, {});
    cfg.stage_channels = {8, 16, 32};
    cfg.se_ratio = 16;  // 8 % 16 != 0
    EXPECT_THROW(build_seresnet(cfg), Error);
    cfg.se_ratio = 4;
    EXPECT_NO_THROW(build_seresnet(cfg));
}

}  // namespace
