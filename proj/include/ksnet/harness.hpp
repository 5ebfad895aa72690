#pragma once

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ksnet/accounting.hpp"
#include "ksnet/checkpoint.hpp"
#include "ksnet/config.hpp"
#include "ksnet/data.hpp"
#include "ksnet/network.hpp"
#include "ksnet/optim.hpp"

namespace ksnet {

struct EpochRow {
    std::size_t epoch = 0;
    double train_loss = 0, train_acc = 0;
    double test_loss = 0, test_acc = 0;
    double lr = 0;
    double seconds = 0;  // JSON mirror only; the CSV stays byte-reproducible
};

struct RunMetrics {
    std::vector<EpochRow> rows;
    bool has_best = false;
    double best_test_acc = 0;
    std::size_t best_epoch = 0;
    long long params = 0;
    long long flops = 0;
};

namespace detail {

/// Shortest round-trip decimal form, deterministic across runs.
inline std::string dtos(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
    return seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(epoch) + 1));
}

template <Scalar T>
std::size_t count_correct(const Tensor<T>& logits, const std::vector<int>& labels) {
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t n = 0; n < N; ++n) {
        const T* row = logits.data() + n * K;
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (row[k] > row[best]) best = k;
        if (static_cast<int>(best) == labels[n]) ++correct;
    }
    return correct;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Metrics serialization. The CSV holds only deterministic columns; wall time
// lives in the JSON mirror.

inline constexpr const char* kMetricsCsvHeader = "epoch,train_loss,train_acc,test_loss,test_acc,lr";

inline std::string metrics_csv(const RunMetrics& m) {
    std::string s = std::string(kMetricsCsvHeader) + "\n";
    for (const auto& r : m.rows)
        s += msg(r.epoch, ",", detail::dtos(r.train_loss), ",", detail::dtos(r.train_acc), ",",
                 detail::dtos(r.test_loss), ",", detail::dtos(r.test_acc), ",", detail::dtos(r.lr),
                 "\n");
    return s;
}

inline json metrics_to_json(const RunMetrics& m) {
    json rows = json::array();
    for (const auto& r : m.rows)
        rows.push_back({{"epoch", r.epoch},
                        {"train_loss", r.train_loss},
                        {"train_acc", r.train_acc},
                        {"test_loss", r.test_loss},
                        {"test_acc", r.test_acc},
                        {"lr", r.lr},
                        {"seconds", r.seconds}});
    json final = {{"trainable_params", m.params}, {"flops", m.flops}};
    if (m.has_best) {
        final["best_test_acc"] = m.best_test_acc;
        final["best_epoch"] = m.best_epoch;
    }
    return json{{"rows", rows}, {"final", final}};
}

inline RunMetrics metrics_from_json(const json& j) {
    RunMetrics m;
    for (const auto& r : j.at("rows")) {
        EpochRow row;
        row.epoch = r.at("epoch").get<std::size_t>();
        row.train_loss = r.at("train_loss").get<double>();
        row.train_acc = r.at("train_acc").get<double>();
        row.test_loss = r.at("test_loss").get<double>();
        row.test_acc = r.at("test_acc").get<double>();
        row.lr = r.at("lr").get<double>();
        row.seconds = r.value("seconds", 0.0);
        m.rows.push_back(row);
    }
    const json& f = j.at("final");
    m.params = f.value("trainable_params", 0LL);
    m.flops = f.value("flops", 0LL);
    if (f.contains("best_test_acc")) {
        m.has_best = true;
        m.best_test_acc = f.at("best_test_acc").get<double>();
        m.best_epoch = f.value("best_epoch", std::size_t{0});
    }
    return m;
}

// ---------------------------------------------------------------------------
// Dataset resolution

template <Scalar T>
struct DataBundle {
    Dataset<T> train, test;
    AugmentPolicy train_policy, eval_policy;
};

template <Scalar T>
Dataset<T> truncate_dataset(Dataset<T> ds, std::size_t limit) {
    if (limit == 0 || limit >= ds.size()) return ds;
    const std::size_t per = ds.images.numel() / ds.size();
    Tensor<T> images({limit, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
    std::copy(ds.images.data(), ds.images.data() + limit * per, images.data());
    ds.images = std::move(images);
    ds.labels.resize(limit);
    return ds;
}

inline std::string resolve_data_root(const DataConfig& d) {
    if (!d.path.empty()) return d.path;
    if (const char* env = std::getenv("KSNET_DATA_ROOT")) return env;
    throw ConfigError(
        "no dataset path: set data.path in the config, pass --data, or export KSNET_DATA_ROOT");
}

template <Scalar T>
DataBundle<T> load_data(const RunConfig& cfg) {
    DataBundle<T> b;
    if (cfg.data.source == DataSourceKind::synthetic) {
        b.train = synthetic_dataset<T>(cfg.seed * 2654435761ULL + 1, cfg.data.synth_train,
                                       cfg.data.synth_classes, cfg.model.in_h, cfg.model.in_w);
        b.test = synthetic_dataset<T>(cfg.seed * 2654435761ULL + 2, cfg.data.synth_test,
                                      cfg.data.synth_classes, cfg.model.in_h, cfg.model.in_w);
        AugmentPolicy p;
        p.normalize = cfg.data.normalize;
        p.mean = {0.5, 0.5, 0.5};
        p.stdev = {0.5, 0.5, 0.5};
        b.eval_policy = p;
        p.random_crop = p.hflip = cfg.data.augment;
        b.train_policy = p;
    } else {
        const CifarVariant variant = cfg.data.source == DataSourceKind::cifar10
                                         ? CifarVariant::cifar10
                                         : CifarVariant::cifar100;
        const std::string root = resolve_data_root(cfg.data);
        b.train = load_cifar<T>(root, variant, Split::train);
        b.test = load_cifar<T>(root, variant, Split::test);
        b.train_policy = cfg.data.augment ? AugmentPolicy::cifar_train() : AugmentPolicy::cifar_eval();
        b.train_policy.normalize = cfg.data.normalize;
        b.eval_policy = AugmentPolicy::cifar_eval();
        b.eval_policy.normalize = cfg.data.normalize;
    }
    b.train = truncate_dataset(std::move(b.train), cfg.data.train_limit);
    b.test = truncate_dataset(std::move(b.test), cfg.data.test_limit);
    KSNET_CHECK(b.train.num_classes == cfg.model.num_classes, ConfigError, "model expects ",
                cfg.model.num_classes, " classes but dataset has ", b.train.num_classes);
    KSNET_CHECK(b.train.images.dim(2) == cfg.model.in_h && b.train.images.dim(3) == cfg.model.in_w,
                ConfigError, "model input ", cfg.model.in_h, "x", cfg.model.in_w,
                " does not match dataset ", b.train.images.dim(2), "x", b.train.images.dim(3));
    return b;
}

// ---------------------------------------------------------------------------
// Checkpoint glue

template <Scalar T>
CheckpointData<T> make_checkpoint(const RunConfig& cfg, const Model<T>& model,
                                  Optimizer<T>* opt, const json& trainer_state) {
    CheckpointData<T> ck;
    ck.config_json = run_config_to_json(cfg, /*include_out_dir=*/false).dump();
    ck.state_json = trainer_state.dump();
    model.store.for_each(
        [&](ParamId, const ParamEntry<T>& e) { ck.params.push_back({e.name, e.value}); });
    if (opt) {
        model.store.for_each([&](ParamId id, const ParamEntry<T>& e) {
            if (!e.trainable) return;
            ck.optim.push_back({"a." + e.name, opt->slot_a(id)});
            if (opt->hyper().kind == OptimKind::adamw)
                ck.optim.push_back({"b." + e.name, opt->slot_b(id)});
        });
    }
    return ck;
}

/// Copies checkpoint parameter entries into the store by name. Any missing,
/// extra, or shape-mismatched entry fails with a single error listing every
/// differing field.
template <Scalar T>
void load_params_into_store(const CheckpointData<T>& ck, ParameterStore<T>& store) {
    std::vector<std::string> diffs;
    std::map<std::string, const Tensor<T>*> by_name;
    for (const auto& [name, t] : ck.params) by_name[name] = &t;
    store.for_each([&](ParamId, ParamEntry<T>& e) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) {
            diffs.push_back(msg("missing in checkpoint: ", e.name));
            return;
        }
        if (it->second->shape() != e.value.shape()) {
            diffs.push_back(msg("shape mismatch for ", e.name, ": checkpoint ",
                                shape_str(it->second->shape()), " vs model ",
                                shape_str(e.value.shape())));
        } else {
            e.value = *it->second;
        }
        by_name.erase(it);
    });
    for (const auto& [name, t] : by_name) diffs.push_back(msg("not in model: ", name));
    if (!diffs.empty()) {
        std::string all = "checkpoint does not match model architecture:";
        for (const auto& d : diffs) all += "\n  " + d;
        throw ConfigError(all);
    }
}

template <Scalar T>
void restore_optimizer(const CheckpointData<T>& ck, const ParameterStore<T>& store,
                       Optimizer<T>& opt, long long step_count) {
    std::map<std::string, const Tensor<T>*> by_name;
    for (const auto& [name, t] : ck.optim) by_name[name] = &t;
    store.for_each([&](ParamId id, const ParamEntry<T>& e) {
        if (!e.trainable) return;
        auto a = by_name.find("a." + e.name);
        KSNET_CHECK(a != by_name.end(), ConfigError, "checkpoint lacks optimizer state for '",
                    e.name, "'");
        opt.slot_a(id) = *a->second;
        if (opt.hyper().kind == OptimKind::adamw) {
            auto bslot = by_name.find("b." + e.name);
            KSNET_CHECK(bslot != by_name.end(), ConfigError,
                        "checkpoint lacks second-moment state for '", e.name, "'");
            opt.slot_b(id) = *bslot->second;
        }
        opt.set_step_count(id, step_count);
    });
}

// ---------------------------------------------------------------------------
// Evaluation: eval-mode batch norm, normalization-only pipeline.

template <Scalar T>
std::pair<double, double> evaluate_dataset(const Graph& g, ParameterStore<T>& store,
                                           const Dataset<T>& ds, std::size_t batch_size,
                                           const AugmentPolicy& policy) {
    BatchStream<T> stream(ds, batch_size, 0, policy, /*training=*/false);
    double loss_sum = 0;
    std::size_t correct = 0, seen = 0;
    Tensor<T> images;
    std::vector<int> labels;
    ForwardOpts<T> opts{/*training=*/false, /*update_running_stats=*/false};
    while (stream.next(images, labels)) {
        Tensor<T> logits = forward(g, store, images, opts);
        LossResult<T> lr = softmax_xent(logits, labels);
        loss_sum += static_cast<double>(lr.loss) * static_cast<double>(labels.size());
        correct += detail::count_correct(logits, labels);
        seen += labels.size();
    }
    KSNET_CHECK(seen > 0, Error, "evaluate: empty dataset");
    return {loss_sum / static_cast<double>(seen),
            static_cast<double>(correct) / static_cast<double>(seen)};
}

// ---------------------------------------------------------------------------
// Training

/// Runs (or resumes) one training job. Per epoch: shuffled batches, forward,
/// loss, backward, per-site gradient accumulation into the store, optimizer
/// step; then an eval pass, a metrics row, and checkpoints (best by test
/// accuracy with ties broken by the earlier epoch, plus the rolling last).
/// A non-finite loss aborts with diagnostics next to the last-good
/// checkpoint. Fixed seeds give bitwise-identical metrics and checkpoints.
template <Scalar T>
RunMetrics train_run(const RunConfig& cfg, bool resume = false) {
    namespace fs = std::filesystem;
    KSNET_CHECK(cfg.epochs <= cfg.schedule.total_epochs, ConfigError, "run.epochs (", cfg.epochs,
                ") exceeds schedule.total_epochs (", cfg.schedule.total_epochs, ")");
    cfg.schedule.validate();
    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);

    DataBundle<T> data = load_data<T>(cfg);
    Model<T> model = build_model<T>(cfg.model, cfg.seed);
    Optimizer<T> opt(cfg.optim, model.store);

    RunMetrics metrics;
    metrics.params = count_params(model.graph, model.plan);
    metrics.flops = count_flops(model.graph);
    // The closed-form count and the store must agree exactly.
    KSNET_CHECK(metrics.params == model.store.trainable_parameter_count(), Error,
                "parameter accounting mismatch: formula ", metrics.params, " vs store ",
                model.store.trainable_parameter_count());

    std::size_t start_epoch = 0;
    long long optim_step = 0;
    const fs::path last_path = out / "last.ckpt";
    const fs::path best_path = out / "best.ckpt";
    if (resume && fs::exists(last_path)) {
        CheckpointData<T> ck = load_checkpoint<T>(last_path.string());
        const std::string want = run_config_to_json(cfg, false).dump();
        KSNET_CHECK(ck.config_json == want, ConfigError, "resume: checkpoint '",
                    last_path.string(), "' was produced by a different run configuration");
        load_params_into_store(ck, model.store);
        const json st = json::parse(ck.state_json);
        start_epoch = st.value("completed_epochs", std::size_t{0});
        optim_step = st.value("optim_step", 0LL);
        restore_optimizer(ck, model.store, opt, optim_step);
        metrics.has_best = st.value("has_best", false);
        metrics.best_test_acc = st.value("best_test_acc", 0.0);
        metrics.best_epoch = st.value("best_epoch", std::size_t{0});
        const fs::path mj = out / "metrics.json";
        if (fs::exists(mj)) {
            std::ifstream in(mj);
            RunMetrics prev = metrics_from_json(json::parse(in));
            for (const auto& r : prev.rows)
                if (r.epoch < start_epoch) metrics.rows.push_back(r);
        }
        KSNET_CHECK(start_epoch <= cfg.epochs, ConfigError, "resume: checkpoint already has ",
                    start_epoch, " epochs, run asks for ", cfg.epochs);
    }

    auto trainer_state = [&](std::size_t completed) {
        return json{{"completed_epochs", completed},
                    {"has_best", metrics.has_best},
                    {"best_test_acc", metrics.best_test_acc},
                    {"best_epoch", metrics.best_epoch},
                    {"optim_step", optim_step}};
    };
    auto write_metrics = [&]() {
        std::ofstream csv(out / "metrics.csv", std::ios::trunc);
        csv << metrics_csv(metrics);
        std::ofstream js(out / "metrics.json", std::ios::trunc);
        js << metrics_to_json(metrics).dump(2) << "\n";
    };
    {
        std::ofstream meta(out / "run_meta.json", std::ios::trunc);
        json j = run_config_to_json(cfg, /*include_out_dir=*/true);
        j["resolved"] = {{"trainable_params", metrics.params},
                         {"flops", metrics.flops},
                         {"train_examples", data.train.size()},
                         {"test_examples", data.test.size()}};
        meta << j.dump(2) << "\n";
    }

    Tensor<T> images;
    std::vector<int> labels;
    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(cfg.schedule, epoch);
        opt.set_lr(lr);
        BatchStream<T> stream(data.train, cfg.batch_size,
                              detail::epoch_seed(cfg.seed, epoch), data.train_policy,
                              /*training=*/true);
        double loss_sum = 0;
        std::size_t correct = 0, seen = 0, batch_idx = 0;
        while (stream.next(images, labels)) {
            Trace<T> trace;
            Tensor<T> logits = forward(model.graph, model.store, images,
                                       ForwardOpts<T>{true, true}, &trace);
            LossResult<T> loss = softmax_xent(logits, labels);
            if (!std::isfinite(static_cast<double>(loss.loss))) {
                std::ofstream diag(out / "diagnostics.json", std::ios::trunc);
                diag << json{{"error", "non-finite loss"},
                             {"epoch", epoch},
                             {"batch", batch_idx},
                             {"last_good_checkpoint", fs::exists(last_path)
                                                          ? last_path.string()
                                                          : ""}}
                            .dump(2)
                     << "\n";
                throw NumericError(msg("non-finite loss at epoch ", epoch, ", batch ", batch_idx,
                                       "; diagnostics written to ",
                                       (out / "diagnostics.json").string()));
            }
            BackwardResult<T> bw = backward(model.graph, model.store, trace, loss.grad_logits);
            zero_grads(model.store);
            accumulate_site_gradients(model.store, model.graph, bw.site_grads);
            step_ready(model.store);
            opt.step(model.store);
            ++optim_step;
            loss_sum += static_cast<double>(loss.loss) * static_cast<double>(labels.size());
            correct += detail::count_correct(logits, labels);
            seen += labels.size();
            ++batch_idx;
        }

        auto [test_loss, test_acc] =
            evaluate_dataset(model.graph, model.store, data.test, cfg.batch_size,
                             data.eval_policy);
        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(seen);
        row.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        row.test_loss = test_loss;
        row.test_acc = test_acc;
        row.lr = lr;
        row.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        metrics.rows.push_back(row);

        if (!metrics.has_best || test_acc > metrics.best_test_acc) {
            metrics.has_best = true;
            metrics.best_test_acc = test_acc;
            metrics.best_epoch = epoch;
            save_checkpoint(best_path.string(),
                            make_checkpoint(cfg, model, &opt, trainer_state(epoch + 1)));
        }
        save_checkpoint(last_path.string(),
                        make_checkpoint(cfg, model, &opt, trainer_state(epoch + 1)));
        write_metrics();
    }

    if (!fs::exists(last_path)) {  // zero-epoch run: checkpoint the initialization
        save_checkpoint(last_path.string(), make_checkpoint(cfg, model, &opt, trainer_state(0)));
        save_checkpoint(best_path.string(), make_checkpoint(cfg, model, &opt, trainer_state(0)));
    }
    write_metrics();
    return metrics;
}

/// Rebuilds the model recorded in a checkpoint and evaluates it on the test
/// split of `data_override` (or of the embedded data config).
template <Scalar T>
std::pair<double, double> evaluate_checkpoint(const std::string& ckpt_path,
                                              std::optional<DataConfig> data_override = {},
                                              std::size_t batch_size = 0) {
    CheckpointData<T> ck = load_checkpoint<T>(ckpt_path);
    RunConfig cfg = run_config_from_json(json::parse(ck.config_json));
    if (data_override) cfg.data = *data_override;
    if (batch_size) cfg.batch_size = batch_size;
    Model<T> model = build_model<T>(cfg.model, cfg.seed);
    load_params_into_store(ck, model.store);
    DataBundle<T> data = load_data<T>(cfg);
    return evaluate_dataset(model.graph, model.store, data.test, cfg.batch_size,
                            data.eval_policy);
}

// ---------------------------------------------------------------------------
// Gradient checking (64-bit only): analytic gradients of every trainable
// parameter of a model against central finite differences on a small
// synthetic batch, reported as worst relative error per parameter.

struct GradcheckEntry {
    std::string name;
    double rel_err = 0;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> per_param;
    double worst = 0;
    std::string worst_param;
    double tolerance = 1e-5;
    double step = 1e-4;
    bool pass = false;
};

inline GradcheckReport gradcheck(const ModelConfig& mcfg, double tolerance = 1e-5,
                                 double step = 1e-4, std::size_t batch = 2,
                                 std::uint64_t seed = 7) {
    Model<double> model = build_model<double>(mcfg, seed);
    Dataset<double> ds = synthetic_dataset<double>(seed + 1, std::max(batch, mcfg.num_classes),
                                                   mcfg.num_classes, mcfg.in_h, mcfg.in_w);
    Tensor<double> images({batch, mcfg.in_ch, mcfg.in_h, mcfg.in_w});
    std::copy(ds.images.data(), ds.images.data() + images.numel(), images.data());
    std::vector<int> labels(ds.labels.begin(), ds.labels.begin() + static_cast<long>(batch));

    // Training-mode forward without running-stat updates keeps the loss a
    // pure function of the parameters.
    ForwardOpts<double> opts{/*training=*/true, /*update_running_stats=*/false};
    auto loss_fn = [&]() {
        Tensor<double> logits = forward(model.graph, model.store, images, opts);
        return static_cast<double>(softmax_xent(logits, labels).loss);
    };

    Trace<double> trace;
    Tensor<double> logits = forward(model.graph, model.store, images, opts, &trace);
    LossResult<double> loss = softmax_xent(logits, labels);
    BackwardResult<double> bw = backward(model.graph, model.store, trace, loss.grad_logits);
    zero_grads(model.store);
    accumulate_site_gradients(model.store, model.graph, bw.site_grads);
    step_ready(model.store);

    GradcheckReport rep;
    rep.tolerance = tolerance;
    rep.step = step;
    model.store.for_each([&](ParamId, ParamEntry<double>& e) {
        if (!e.trainable) return;
        double diff2 = 0, a2 = 0, n2 = 0;
        for (std::size_t k = 0; k < e.value.numel(); ++k) {
            const double v = e.value[k];
            e.value[k] = v + step;
            const double lp = loss_fn();
            e.value[k] = v - step;
            const double lm = loss_fn();
            e.value[k] = v;
            const double num = (lp - lm) / (2 * step);
            const double ana = e.grad[k];
            diff2 += (ana - num) * (ana - num);
            a2 += ana * ana;
            n2 += num * num;
        }
        const double denom = std::sqrt(a2) + std::sqrt(n2);
        const double rel = denom > 1e-12 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
        rep.per_param.push_back({e.name, rel});
        if (rel > rep.worst) {
            rep.worst = rel;
            rep.worst_param = e.name;
        }
    });
    rep.pass = rep.worst <= tolerance;
    return rep;
}

// ---------------------------------------------------------------------------
// Sweeps: a grid of run configs, one combined CSV row per run. Individual
// failures are recorded and the sweep continues.

struct SweepConfig {
    RunConfig base;
    std::vector<std::size_t> depths;
    std::vector<std::size_t> channels;                 // convmixer axis
    std::vector<SharingPreset> presets;                // convmixer axis
    std::vector<std::vector<int>> stage_sets;          // se_resnet axis
    std::vector<std::uint64_t> seeds;
    std::string out_csv;
};

struct SweepRow {
    RunConfig cfg;
    std::string label;
    long long params = 0, flops = 0;
    double best_test_acc = 0, final_train_acc = 0;
    std::string status = "ok";
};

inline SweepConfig sweep_config_from_json(const json& j) {
    detail::check_keys(j, {"base", "grid", "out_csv"}, "(sweep root)");
    SweepConfig sc;
    sc.base = run_config_from_json(j.at("base"));
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        detail::check_keys(g, {"depth", "channels", "preset", "shared_stages", "seed"}, "grid");
        if (g.contains("depth")) sc.depths = g.at("depth").get<std::vector<std::size_t>>();
        if (g.contains("channels")) sc.channels = g.at("channels").get<std::vector<std::size_t>>();
        if (g.contains("preset"))
            for (const auto& p : g.at("preset")) sc.presets.push_back(parse_preset(p));
        if (g.contains("shared_stages"))
            sc.stage_sets = g.at("shared_stages").get<std::vector<std::vector<int>>>();
        if (g.contains("seed")) sc.seeds = g.at("seed").get<std::vector<std::uint64_t>>();
    }
    sc.out_csv = j.value("out_csv", "");
    return sc;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string s =
        "family,preset,shared_stages,depth,channels,seed,params,flops,best_test_acc,final_train_"
        "acc,status\n";
    for (const auto& r : rows) {
        const ModelConfig& m = r.cfg.model;
        std::string stages;
        for (int st : m.shared_stages) stages += stages.empty() ? msg(st) : msg("+", st);
        std::string status = r.status;
        for (auto& ch : status)
            if (ch == ',' || ch == '\n') ch = ';';
        s += msg(m.family == Family::convmixer ? "convmixer" : "se_resnet", ",",
                 preset_name(m.preset), ",", stages, ",", m.depth, ",", m.channels, ",", r.cfg.seed,
                 ",", r.params, ",", r.flops, ",", detail::dtos(r.best_test_acc), ",",
                 detail::dtos(r.final_train_acc), ",", status, "\n");
    }
    return s;
}

template <Scalar T>
std::vector<SweepRow> sweep(const SweepConfig& sc) {
    namespace fs = std::filesystem;
    auto one = [](std::vector<std::size_t> v, std::size_t fallback) {
        return v.empty() ? std::vector<std::size_t>{fallback} : v;
    };
    const auto depths = one(sc.depths, sc.base.model.depth);
    const auto channels = one(sc.channels, sc.base.model.channels);
    const auto seeds = sc.seeds.empty() ? std::vector<std::uint64_t>{sc.base.seed} : sc.seeds;
    std::vector<SharingPreset> presets = sc.presets;
    std::vector<std::vector<int>> stage_sets = sc.stage_sets;
    if (sc.base.model.family == Family::convmixer) {
        if (presets.empty()) presets = {sc.base.model.preset};
        stage_sets = {sc.base.model.shared_stages};
    } else {
        if (stage_sets.empty()) stage_sets = {sc.base.model.shared_stages};
        presets = {sc.base.model.preset};
    }

    std::vector<SweepRow> rows;
    for (std::size_t depth : depths)
        for (std::size_t ch : channels)
            for (const auto& preset : presets)
                for (const auto& stages : stage_sets)
                    for (std::uint64_t seed : seeds) {
                        SweepRow row;
                        row.cfg = sc.base;
                        row.cfg.model.depth = depth;
                        row.cfg.model.channels = ch;
                        row.cfg.model.preset = preset;
                        row.cfg.model.shared_stages = stages;
                        row.cfg.seed = seed;
                        std::string stage_slug;
                        for (int st : stages) stage_slug += msg("s", st);
                        row.label = msg("d", depth, "_c", ch, "_", preset_name(preset),
                                        stage_slug.empty() ? "" : "_" + stage_slug, "_seed", seed);
                        row.cfg.out_dir =
                            (fs::path(sc.base.out_dir) / row.label).string();
                        try {
                            RunMetrics m = train_run<T>(row.cfg);
                            row.params = m.params;
                            row.flops = m.flops;
                            row.best_test_acc = m.has_best ? m.best_test_acc : 0.0;
                            row.final_train_acc = m.rows.empty() ? 0.0 : m.rows.back().train_acc;
                        } catch (const Error& e) {
                            row.status = msg("error(", e.kind(), "): ", e.what());
                        } catch (const std::exception& e) {
                            row.status = msg("error: ", e.what());
                        }
                        rows.push_back(std::move(row));
                    }

    const std::string csv_path =
        sc.out_csv.empty() ? (fs::path(sc.base.out_dir) / "sweep.csv").string() : sc.out_csv;
    fs::create_directories(fs::path(csv_path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(csv_path).parent_path());
    std::ofstream out(csv_path, std::ios::trunc);
    out << sweep_csv(rows);
    return rows;
}

}  // namespace ksnet
