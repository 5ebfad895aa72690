// ksnet command-line interface: train, eval, count, flops, gradcheck, sweep.
// Exit status 0 on success; nonzero with an error JSON on stderr otherwise.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ksnet/ksnet.hpp"

namespace {

using namespace ksnet;

struct CommonFlags {
    std::string config;
    std::string data;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::string out;
    std::string precision;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required = true) {
    auto* c = cmd->add_option("--config", f.config, "run configuration file (JSON)");
    if (config_required) c->required();
    cmd->add_option("--data", f.data, "dataset root (overrides config and KSNET_DATA_ROOT)");
    cmd->add_option("--seed", f.seed, "override run.seed");
    cmd->add_option("--epochs", f.epochs, "override run.epochs");
    cmd->add_option("--batch-size", f.batch_size, "override run.batch_size");
    cmd->add_option("--lr", f.lr, "override optimizer base learning rate");
    cmd->add_option("--out", f.out, "override run.out_dir");
    cmd->add_option("--precision", f.precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
}

RunConfig resolve_config(const CommonFlags& f) {
    RunConfig cfg = load_run_config(f.config);
    if (!f.data.empty()) cfg.data.path = f.data;
    if (f.seed) cfg.seed = *f.seed;
    if (f.epochs) cfg.epochs = *f.epochs;
    if (f.batch_size) cfg.batch_size = *f.batch_size;
    if (f.lr) {
        cfg.optim.lr = *f.lr;
        cfg.schedule.base_lr = *f.lr;
    }
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (!f.precision.empty())
        cfg.precision = f.precision == "f64" ? Precision::f64 : Precision::f32;
    return cfg;
}

int do_train(const CommonFlags& flags, bool resume) {
    RunConfig cfg = resolve_config(flags);
    RunMetrics m = cfg.precision == Precision::f64 ? train_run<double>(cfg, resume)
                                                   : train_run<float>(cfg, resume);
    json out = metrics_to_json(m)["final"];
    out["epochs"] = m.rows.size();
    out["out_dir"] = cfg.out_dir;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int do_eval(const CommonFlags& flags, const std::string& ckpt) {
    std::optional<DataConfig> data_override;
    if (!flags.config.empty()) {
        data_override = load_run_config(flags.config).data;
    }
    if (!flags.data.empty()) {
        if (!data_override) data_override = DataConfig{};
        data_override->path = flags.data;
    }
    const bool f64 = flags.precision == "f64";
    auto [loss, acc] = f64 ? evaluate_checkpoint<double>(ckpt, data_override,
                                                         flags.batch_size.value_or(0))
                           : evaluate_checkpoint<float>(ckpt, data_override,
                                                        flags.batch_size.value_or(0));
    std::cout << json{{"test_loss", loss}, {"test_acc", acc}}.dump(2) << "\n";
    return 0;
}

int do_count(const CommonFlags& flags, bool as_json) {
    RunConfig cfg = resolve_config(flags);
    auto [graph, plan] = build_graph(cfg.model);
    CostReport rep = cost_report(graph, plan);
    if (as_json) {
        json rows = json::array();
        for (const auto& r : rep.rows)
            rows.push_back(
                {{"layer", r.name}, {"kind", r.kind}, {"params", r.params}, {"flops", r.flops}});
        std::cout << json{{"trainable_params", rep.trainable_params},
                          {"flops", rep.flops},
                          {"gflops", static_cast<double>(rep.flops) / 1e9},
                          {"layers", rows}}
                         .dump(2)
                  << "\n";
    } else {
        std::cout << cost_table(rep);
    }
    return 0;
}

int do_gradcheck(const CommonFlags& flags, double tolerance, double step) {
    RunConfig cfg = resolve_config(flags);
    KSNET_CHECK(flags.precision != "f32" && cfg.precision != Precision::f32, ConfigError,
                "gradcheck runs in 64-bit mode; drop --precision f32");
    GradcheckReport rep = gradcheck(cfg.model, tolerance, step);
    for (const auto& e : rep.per_param)
        std::printf("%-40s rel_err %.3e\n", e.name.c_str(), e.rel_err);
    std::printf("worst: %.3e (%s), tolerance %.1e -> %s\n", rep.worst, rep.worst_param.c_str(),
                rep.tolerance, rep.pass ? "pass" : "FAIL");
    if (!rep.pass)
        throw NumericError(msg("gradcheck failed: worst relative error ", rep.worst, " in '",
                               rep.worst_param, "' exceeds tolerance ", tolerance));
    return 0;
}

int do_sweep(const CommonFlags& flags) {
    std::ifstream in(flags.config);
    KSNET_CHECK(in.good(), IoError, "cannot open sweep config '", flags.config, "'");
    SweepConfig sc = sweep_config_from_json(json::parse(in));
    if (!flags.data.empty()) sc.base.data.path = flags.data;
    if (!flags.out.empty()) sc.base.out_dir = flags.out;
    if (flags.epochs) sc.base.epochs = *flags.epochs;
    if (flags.batch_size) sc.base.batch_size = *flags.batch_size;
    if (!flags.precision.empty())
        sc.base.precision = flags.precision == "f64" ? Precision::f64 : Precision::f32;
    std::vector<SweepRow> rows = sc.base.precision == Precision::f64 ? sweep<double>(sc)
                                                                     : sweep<float>(sc);
    std::cout << sweep_csv(rows);
    std::size_t failed = 0;
    for (const auto& r : rows)
        if (r.status != "ok") ++failed;
    if (failed) std::cerr << failed << " of " << rows.size() << " runs failed (see status column)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kernel-sharing CNN training engine"};
    app.require_subcommand(1);

    CommonFlags flags;
    bool resume = false;
    double tolerance = 1e-5, fd_step = 1e-4;
    std::string ckpt_path;
    bool as_json = false;

    auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
    add_common(train_cmd, flags);
    train_cmd->add_flag("--resume", resume, "resume from <out_dir>/last.ckpt if present");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval_cmd->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
    add_common(eval_cmd, flags, /*config_required=*/false);

    auto* count_cmd = app.add_subcommand("count", "trainable parameter / FLOP report");
    add_common(count_cmd, flags);
    count_cmd->add_flag("--json", as_json, "emit the report as JSON");

    auto* flops_cmd = app.add_subcommand("flops", "alias of count (same cost report)");
    add_common(flops_cmd, flags);
    flops_cmd->add_flag("--json", as_json, "emit the report as JSON");

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    add_common(grad_cmd, flags);
    grad_cmd->add_option("--tolerance", tolerance, "worst relative error allowed");
    grad_cmd->add_option("--step", fd_step, "central-difference step");

    auto* sweep_cmd = app.add_subcommand("sweep", "run a config grid, emit a combined CSV");
    add_common(sweep_cmd, flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return do_train(flags, resume);
        if (eval_cmd->parsed()) return do_eval(flags, ckpt_path);
        if (count_cmd->parsed()) return do_count(flags, as_json);
        if (flops_cmd->parsed()) return do_count(flags, as_json);
        if (grad_cmd->parsed()) return do_gradcheck(flags, tolerance, fd_step);
        if (sweep_cmd->parsed()) return do_sweep(flags);
    } catch (const ksnet::Error& e) {
        std::cerr << ksnet::json{{"error", {{"type", e.kind()}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << ksnet::json{{"error", {{"type", "error"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 1;
    }
    return 0;
}
