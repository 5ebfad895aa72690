#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "ksnet/data.hpp"
#include "ksnet/models.hpp"
#include "ksnet/optim.hpp"

namespace ksnet {

using json = nlohmann::json;

enum class DataSourceKind { cifar10, cifar100, synthetic };
enum class Precision { f32, f64 };

struct DataConfig {
    DataSourceKind source = DataSourceKind::synthetic;
    std::string path;  // CIFAR root; empty -> KSNET_DATA_ROOT
    bool augment = false;
    bool normalize = true;
    std::size_t train_limit = 0;  // 0 = full split
    std::size_t test_limit = 0;
    std::size_t synth_train = 512;
    std::size_t synth_test = 256;
    std::size_t synth_classes = 2;
};

/// Everything needed to reproduce a run; serialized into run metadata and
/// into checkpoints (minus the output directory).
struct RunConfig {
    ModelConfig model;
    OptimHyper optim;
    Schedule schedule;
    DataConfig data;
    std::size_t epochs = 1;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
    Precision precision = Precision::f32;
    std::string out_dir = "run_out";
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const char* where) {
    KSNET_CHECK(j.is_object(), ConfigError, "config section '", where, "' must be an object");
    for (const auto& kv : j.items())
        KSNET_CHECK(allowed.count(kv.key()) > 0, ConfigError, "config: unknown key '", kv.key(),
                    "' in section '", where, "'");
}

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table,
             const char* what) {
    for (const auto& [name, v] : table)
        if (s == name) return v;
    std::string allowed;
    for (const auto& [name, v] : table) {
        if (!allowed.empty()) allowed += ", ";
        allowed += name;
    }
    throw ConfigError(msg("config: bad ", what, " '", s, "' (expected one of: ", allowed, ")"));
}

}  // namespace detail

inline Family parse_family(const std::string& s) {
    return detail::parse_enum<Family>(
        s, {{"convmixer", Family::convmixer}, {"se_resnet", Family::se_resnet}}, "family");
}

inline SharingPreset parse_preset(const std::string& s) {
    return detail::parse_enum<SharingPreset>(s,
                                             {{"none", SharingPreset::none},
                                              {"two_kernel", SharingPreset::two_kernel},
                                              {"four_kernel", SharingPreset::four_kernel},
                                              {"eight_kernel", SharingPreset::eight_kernel}},
                                             "sharing preset");
}

inline ActKind parse_act(const std::string& s) {
    return detail::parse_enum<ActKind>(s,
                                       {{"relu", ActKind::relu},
                                        {"gelu", ActKind::gelu},
                                        {"gelu_erf", ActKind::gelu_erf},
                                        {"sigmoid", ActKind::sigmoid}},
                                       "activation");
}

inline ModelConfig model_config_from_json(const json& j) {
    detail::check_keys(j, {"family", "channels", "patch_size", "dw_kernel", "preset", "act",
                           "stage_channels", "shared_stages", "se_ratio", "depth", "num_classes",
                           "input"},
                       "model");
    ModelConfig m;
    m.family = parse_family(j.value("family", "convmixer"));
    m.channels = j.value("channels", m.channels);
    m.patch_size = j.value("patch_size", m.patch_size);
    m.dw_kernel = j.value("dw_kernel", m.dw_kernel);
    m.preset = parse_preset(j.value("preset", "none"));
    m.act = parse_act(j.value("act", "gelu"));
    if (j.contains("stage_channels")) {
        const auto& sc = j.at("stage_channels");
        KSNET_CHECK(sc.is_array() && sc.size() == 3, ConfigError,
                    "config: model.stage_channels must be an array of 3");
        for (std::size_t i = 0; i < 3; ++i) m.stage_channels[i] = sc.at(i).get<std::size_t>();
    }
    if (j.contains("shared_stages"))
        m.shared_stages = j.at("shared_stages").get<std::vector<int>>();
    m.se_ratio = j.value("se_ratio", m.se_ratio);
    m.depth = j.value("depth", m.depth);
    m.num_classes = j.value("num_classes", m.num_classes);
    if (j.contains("input")) {
        const auto& in = j.at("input");
        detail::check_keys(in, {"channels", "height", "width"}, "model.input");
        m.in_ch = in.value("channels", m.in_ch);
        m.in_h = in.value("height", m.in_h);
        m.in_w = in.value("width", m.in_w);
    }
    return m;
}

inline json model_config_to_json(const ModelConfig& m) {
    json j;
    j["family"] = m.family == Family::convmixer ? "convmixer" : "se_resnet";
    j["channels"] = m.channels;
    j["patch_size"] = m.patch_size;
    j["dw_kernel"] = m.dw_kernel;
    j["preset"] = preset_name(m.preset);
    j["act"] = act_name(m.act);
    j["stage_channels"] = m.stage_channels;
    j["shared_stages"] = m.shared_stages;
    j["se_ratio"] = m.se_ratio;
    j["depth"] = m.depth;
    j["num_classes"] = m.num_classes;
    j["input"] = {{"channels", m.in_ch}, {"height", m.in_h}, {"width", m.in_w}};
    return j;
}

inline RunConfig run_config_from_json(const json& j) {
    detail::check_keys(j, {"model", "optim", "schedule", "data", "run"}, "(root)");
    RunConfig cfg;
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));

    if (j.contains("optim")) {
        const json& o = j.at("optim");
        detail::check_keys(o, {"kind", "lr", "momentum", "beta1", "beta2", "eps", "weight_decay"},
                           "optim");
        cfg.optim.kind = detail::parse_enum<OptimKind>(
            o.value("kind", "sgd"), {{"sgd", OptimKind::sgd}, {"adamw", OptimKind::adamw}},
            "optimizer kind");
        cfg.optim.lr = o.value("lr", cfg.optim.lr);
        cfg.optim.momentum = o.value("momentum", cfg.optim.momentum);
        cfg.optim.beta1 = o.value("beta1", cfg.optim.beta1);
        cfg.optim.beta2 = o.value("beta2", cfg.optim.beta2);
        cfg.optim.eps = o.value("eps", cfg.optim.eps);
        cfg.optim.weight_decay = o.value("weight_decay", cfg.optim.weight_decay);
    }

    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        detail::check_keys(s, {"kind", "base_lr", "total_epochs", "milestones", "gamma", "min_lr"},
                           "schedule");
        cfg.schedule.kind = detail::parse_enum<ScheduleKind>(s.value("kind", "constant"),
                                                             {{"cosine", ScheduleKind::cosine},
                                                              {"multistep", ScheduleKind::multistep},
                                                              {"constant", ScheduleKind::constant}},
                                                             "schedule kind");
        cfg.schedule.base_lr = s.value("base_lr", cfg.optim.lr);
        cfg.schedule.total_epochs = s.value("total_epochs", cfg.schedule.total_epochs);
        if (s.contains("milestones"))
            cfg.schedule.milestones = s.at("milestones").get<std::vector<std::size_t>>();
        cfg.schedule.gamma = s.value("gamma", cfg.schedule.gamma);
        cfg.schedule.min_lr = s.value("min_lr", cfg.schedule.min_lr);
    } else {
        cfg.schedule.base_lr = cfg.optim.lr;
    }

    if (j.contains("data")) {
        const json& d = j.at("data");
        detail::check_keys(d,
                           {"source", "path", "augment", "normalize", "train_limit", "test_limit",
                            "synthetic"},
                           "data");
        cfg.data.source = detail::parse_enum<DataSourceKind>(
            d.value("source", "synthetic"),
            {{"cifar10", DataSourceKind::cifar10},
             {"cifar100", DataSourceKind::cifar100},
             {"synthetic", DataSourceKind::synthetic}},
            "data source");
        cfg.data.path = d.value("path", cfg.data.path);
        cfg.data.augment = d.value("augment", cfg.data.augment);
        cfg.data.normalize = d.value("normalize", cfg.data.normalize);
        cfg.data.train_limit = d.value("train_limit", cfg.data.train_limit);
        cfg.data.test_limit = d.value("test_limit", cfg.data.test_limit);
        if (d.contains("synthetic")) {
            const json& sy = d.at("synthetic");
            detail::check_keys(sy, {"n_train", "n_test", "classes"}, "data.synthetic");
            cfg.data.synth_train = sy.value("n_train", cfg.data.synth_train);
            cfg.data.synth_test = sy.value("n_test", cfg.data.synth_test);
            cfg.data.synth_classes = sy.value("classes", cfg.data.synth_classes);
        }
    }

    if (j.contains("run")) {
        const json& r = j.at("run");
        detail::check_keys(r, {"epochs", "batch_size", "seed", "precision", "out_dir"}, "run");
        cfg.epochs = r.value("epochs", cfg.epochs);
        cfg.batch_size = r.value("batch_size", cfg.batch_size);
        cfg.seed = r.value("seed", cfg.seed);
        cfg.precision = detail::parse_enum<Precision>(
            r.value("precision", "f32"), {{"f32", Precision::f32}, {"f64", Precision::f64}},
            "precision");
        cfg.out_dir = r.value("out_dir", cfg.out_dir);
    }
    cfg.schedule.validate();
    return cfg;
}

inline json run_config_to_json(const RunConfig& cfg, bool include_out_dir) {
    json j;
    j["model"] = model_config_to_json(cfg.model);
    j["optim"] = {{"kind", optim_name(cfg.optim.kind)},
                  {"lr", cfg.optim.lr},
                  {"momentum", cfg.optim.momentum},
                  {"beta1", cfg.optim.beta1},
                  {"beta2", cfg.optim.beta2},
                  {"eps", cfg.optim.eps},
                  {"weight_decay", cfg.optim.weight_decay}};
    j["schedule"] = {{"kind", schedule_name(cfg.schedule.kind)},
                     {"base_lr", cfg.schedule.base_lr},
                     {"total_epochs", cfg.schedule.total_epochs},
                     {"milestones", cfg.schedule.milestones},
                     {"gamma", cfg.schedule.gamma},
                     {"min_lr", cfg.schedule.min_lr}};
    const char* src = cfg.data.source == DataSourceKind::cifar10
                          ? "cifar10"
                          : (cfg.data.source == DataSourceKind::cifar100 ? "cifar100" : "synthetic");
    j["data"] = {{"source", src},
                 {"path", cfg.data.path},
                 {"augment", cfg.data.augment},
                 {"normalize", cfg.data.normalize},
                 {"train_limit", cfg.data.train_limit},
                 {"test_limit", cfg.data.test_limit},
                 {"synthetic",
                  {{"n_train", cfg.data.synth_train},
                   {"n_test", cfg.data.synth_test},
                   {"classes", cfg.data.synth_classes}}}};
    j["run"] = {{"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"seed", cfg.seed},
                {"precision", cfg.precision == Precision::f32 ? "f32" : "f64"}};
    if (include_out_dir) j["run"]["out_dir"] = cfg.out_dir;
    return j;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    KSNET_CHECK(in.good(), IoError, "cannot open config '", path, "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(msg("config '", path, "': ", e.what()));
    }
    return run_config_from_json(j);
}

}  // namespace ksnet
