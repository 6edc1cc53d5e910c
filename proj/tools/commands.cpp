#include "commands.hpp"

#include "run_config.hpp"

#include "nst/errors.hpp"
#include "nst/metrics.hpp"
#include "nst/oracle.hpp"
#include "nst/training.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace nst::cli {

namespace fs = std::filesystem;

namespace {

/// Refuses to clobber an existing non-empty directory unless forced.
void prepare_dir(const fs::path& dir, bool force) {
    if (dir.empty()) {
        throw ConfigError("field 'output_dir' is required (or pass --output)");
    }
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) {
            throw ConfigError(fmt::format("output path '{}' exists and is not a directory", dir.string()));
        }
        if (!fs::is_empty(dir) && !force) {
            throw ConfigError(fmt::format("output directory '{}' is not empty; pass --force to overwrite",
                                          dir.string()));
        }
    }
    fs::create_directories(dir);
}

void check_writable(const fs::path& file, bool force) {
    if (fs::exists(file) && !force) {
        throw ConfigError(fmt::format("'{}' exists; pass --force to overwrite", file.string()));
    }
}

std::ofstream open_out(const fs::path& file) {
    if (file.has_parent_path()) {
        fs::create_directories(file.parent_path());
    }
    std::ofstream out(file);
    if (!out) {
        throw DataError(fmt::format("cannot write '{}'", file.string()));
    }
    return out;
}

std::vector<Override> parse_overrides(const std::vector<std::string>& sets) {
    std::vector<Override> out;
    for (const auto& s : sets) {
        out.push_back(parse_override(s));
    }
    return out;
}

struct RunOptions {
    std::string config;
    std::vector<std::string> sets;
    std::string output;
    bool force = false;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("config", o.config, "Run config file (YAML)")->required();
    cmd->add_option("--set", o.sets, "Override a config key, e.g. --set model.d_model=32");
    cmd->add_option("--output", o.output, "Output directory (overrides output_dir)");
    cmd->add_flag("--force", o.force, "Overwrite existing outputs");
}

RunConfig resolve_config(const RunOptions& o) {
    RunConfig c = load_run_config(o.config, parse_overrides(o.sets));
    if (!o.output.empty()) {
        c.output_dir = o.output;
    }
    return c;
}

std::string fmt_num(double v) {
    return fmt::format("{}", v);
}

void write_history(const fs::path& file, const TrainResult& r) {
    auto out = open_out(file);
    out << "epoch,train_loss,val_mse,val_mae,lr\n";
    for (const auto& e : r.history) {
        out << fmt::format("{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_mse, e.val_mae, e.lr);
    }
}

int cmd_train(const RunOptions& o, std::ostream& out, std::ostream& err) {
    RunConfig c = resolve_config(o);
    Dataset data = load_dataset(c);
    c.model.validate();
    prepare_dir(c.output_dir, o.force);
    if (data.filled_cells > 0) {
        fmt::print(err, "forward-filled {} missing cells\n", data.filled_cells);
    }
    {
        auto f = open_out(c.output_dir / "config.yaml");
        f << to_yaml(c);
    }
    Model model(c.model);
    const auto counts = count_parameters(model.parameters());
    fmt::print(err, "model: {} base parameters, {} projector parameters\n", counts.base, counts.projector);
    const TrainResult r = train(model, data, c.split, c.train, c.output_dir / "checkpoint.txt",
                                [&](const EpochRecord& e) {
                                    fmt::print(err, "epoch {:>3}  train {:.6f}  val mse {:.6f}  mae {:.6f}  {:.1f}s\n",
                                               e.epoch, e.train_loss, e.val_mse, e.val_mae, e.seconds);
                                });
    write_history(c.output_dir / "history.csv", r);
    {
        auto f = open_out(c.output_dir / "train_summary.txt");
        f << fmt::format("best_epoch={}\nbest_val_mse={}\nepochs_run={}\nstopped_early={}\n", r.best_epoch,
                         r.best_val_mse, r.history.size(), r.stopped_early ? "true" : "false");
        f << fmt::format("parameters_base={}\nparameters_projector={}\n", counts.base, counts.projector);
    }
    fmt::print(out, "best epoch {} val mse {}\nwrote {}\n", r.best_epoch, fmt_num(r.best_val_mse),
               c.output_dir.string());
    return kExitOk;
}

struct EvalArgs {
    RunOptions run;
    std::string checkpoint;
    std::string split = "test";
    std::size_t stride = 1;
};

void write_eval(const fs::path& dir, const std::string& split, const EvalReport& r) {
    {
        auto f = open_out(dir / fmt::format("eval_{}.csv", split));
        f << "horizon,mse,mae\n";
        f << fmt::format("all,{},{}\n", r.overall.mse, r.overall.mae);
        for (std::size_t h = 0; h < r.horizon.size(); ++h) {
            f << fmt::format("{},{},{}\n", h + 1, r.horizon[h].mse, r.horizon[h].mae);
        }
    }
    auto f = open_out(dir / fmt::format("eval_{}.txt", split));
    f << fmt::format("split={}\nwindows={}\nmse={}\nmae={}\n", split, r.windows, r.overall.mse, r.overall.mae);
    if (r.relative) {
        f << fmt::format("relative_stationarity={}\n", r.relative->aggregate);
        for (std::size_t j = 0; j < r.relative->per_variable.size(); ++j) {
            f << fmt::format("relative_stationarity.{}={}\n", j, r.relative->per_variable[j]);
        }
    } else {
        f << "relative_stationarity=nan\n";
    }
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig c = resolve_config(a.run);
    const Split split = parse_split(a.split);
    const fs::path ckpt = a.checkpoint.empty() ? c.output_dir / "checkpoint.txt" : fs::path(a.checkpoint);
    const std::string name(to_string(split));
    for (const char* ext : {".csv", ".txt"}) {
        check_writable(c.output_dir / ("eval_" + name + ext), a.run.force);
    }
    Dataset data = load_dataset(c);
    Model model = load_checkpoint(ckpt);
    const EvalReport r = evaluate(model, data, c.split, {split, 64, a.stride});
    write_eval(c.output_dir, name, r);
    fmt::print(out, "{}: {} windows  mse {}  mae {}", name, r.windows, fmt_num(r.overall.mse),
               fmt_num(r.overall.mae));
    if (r.relative) {
        fmt::print(out, "  relative stationarity {:.2f}%", r.relative->aggregate);
    } else {
        fmt::print(err, "split too short for relative stationarity\n");
    }
    fmt::print(out, "\n");
    return kExitOk;
}

struct VerifyArgs {
    std::size_t instances = 1000;
    std::uint64_t seed = 20240601;
    double tolerance = 1e-6;
    std::string report;
    bool force = false;
};

nlohmann::json instance_json(const oracle::InstanceResult& r) {
    return {{"index", r.index},         {"length", r.length},       {"channels", r.channels},
            {"width", r.width},         {"scale", r.scale},         {"deviation", r.deviation},
            {"expansion", r.expansion}, {"row_constant_drop", r.row_constant_drop}, {"passed", r.passed}};
}

int cmd_verify(const VerifyArgs& a, std::ostream& out, std::ostream& err) {
    if (!(a.tolerance > 0.0)) {
        throw ConfigError(fmt::format("--tolerance must be positive, got {}", a.tolerance));
    }
    if (!a.report.empty()) {
        check_writable(a.report, a.force);
    }
    if (a.instances == 0) {
        fmt::print(err, "warning: 0 instances requested; nothing to check\n");
    }
    const auto s = oracle::verify_instances(a.instances, a.seed, a.tolerance);
    if (!a.report.empty()) {
        nlohmann::json j;
        j["instances"] = a.instances;
        j["seed"] = a.seed;
        j["tolerance"] = a.tolerance;
        j["failures"] = s.failures;
        j["passed"] = s.passed();
        j["worst_deviation"] = s.worst_deviation;
        j["worst_index"] = s.worst_index;
        j["results"] = nlohmann::json::array();
        for (const auto& r : s.instances) {
            j["results"].push_back(instance_json(r));
        }
        open_out(a.report) << j.dump(2) << '\n';
    }
    fmt::print(out, "{} instances, {} failures, worst deviation {:.3e}, tolerance {:.1e}\n", a.instances, s.failures,
               s.worst_deviation, a.tolerance);
    if (!s.passed()) {
        fmt::print(err, "worst instance: {}\n", instance_json(s.instances[s.worst_index]).dump());
        return kExitRuntime;
    }
    return kExitOk;
}

struct StationarityArgs {
    std::string csv;
    std::string missing = "strict";
    std::optional<std::size_t> lag;
};

int cmd_stationarity(const StationarityArgs& a, std::ostream& out, std::ostream&) {
    CsvOptions opts;
    if (a.missing == "forward_fill") {
        opts.missing = MissingPolicy::forward_fill;
    } else if (a.missing != "strict") {
        throw ConfigError(fmt::format("--missing: unknown value '{}' (strict, forward_fill)", a.missing));
    }
    const Dataset data = load_csv(a.csv, opts);
    fmt::print(out, "variable,adf_statistic,lag,nobs\n");
    double mean = 0.0;
    for (std::size_t j = 0; j < data.cols(); ++j) {
        const auto col = data.column(j);
        AdfResult r;
        try {
            r = adf_statistic(col, a.lag);
        } catch (const Error&) {
            rethrow_with_context(fmt::format("variable '{}'", data.columns[j]));
        }
        fmt::print(out, "{},{},{},{}\n", data.columns[j], r.statistic, r.lag_order, r.nobs);
        mean += r.statistic;
    }
    fmt::print(out, "mean,{},,\n", mean / static_cast<double>(data.cols()));
    return kExitOk;
}

struct Variant {
    const char* name;
    AttentionMode mode;
    bool stationarize;
};

int cmd_ablate(const RunOptions& o, std::ostream& out, std::ostream& err) {
    RunConfig c = resolve_config(o);
    Dataset data = load_dataset(c);
    c.model.validate();
    prepare_dir(c.output_dir, o.force);
    {
        auto f = open_out(c.output_dir / "config.yaml");
        f << to_yaml(c);
    }
    const std::vector<Variant> variants = {{"vanilla", AttentionMode::vanilla, false},
                                           {"stationarization_only", AttentionMode::vanilla, true},
                                           {"tau_only", AttentionMode::tau_only, true},
                                           {"delta_only", AttentionMode::delta_only, true},
                                           {"both", AttentionMode::both, true}};
    auto table = open_out(c.output_dir / "ablation.csv");
    table << "mode,mse,mae,relative_stationarity\n";
    fmt::print(out, "{:<22} {:>12} {:>12} {:>10}\n", "mode", "mse", "mae", "rel.stat%");
    for (const auto& v : variants) {
        ModelConfig mc = c.model;
        mc.mode = v.mode;
        mc.stationarize = v.stationarize;
        Model model(mc);
        fmt::print(err, "training {}\n", v.name);
        train(model, data, c.split, c.train);
        const EvalReport r = evaluate(model, data, c.split, {Split::test, 64, c.train.eval_stride});
        const double rs = r.relative ? r.relative->aggregate : std::nan("");
        table << fmt::format("{},{},{},{}\n", v.name, r.overall.mse, r.overall.mae, rs);
        table.flush();
        fmt::print(out, "{:<22} {:>12.6f} {:>12.6f} {:>10.2f}\n", v.name, r.overall.mse, r.overall.mae, rs);
    }
    return kExitOk;
}

struct SynthArgs {
    SyntheticSpec spec;
    std::string kind = "trend_seasonal";
    std::string output;
    bool force = false;
};

int cmd_gen_synth(SynthArgs a, std::ostream& out, std::ostream&) {
    a.spec.kind = parse_synthetic_kind(a.kind);
    a.spec.validate();
    check_writable(a.output, a.force);
    const Dataset d = generate_synthetic(a.spec);
    if (fs::path(a.output).has_parent_path()) {
        fs::create_directories(fs::path(a.output).parent_path());
    }
    write_csv(d, a.output);
    fmt::print(out, "wrote {} rows x {} columns to {}\n", d.rows, d.cols(), a.output);
    return kExitOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Non-stationary Transformer forecasting tool"};
    app.name("nst");
    app.require_subcommand(1);

    RunOptions train_opts;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    add_run_options(train_cmd, train_opts);

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    add_run_options(eval_cmd, eval_args.run);
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint (default <output_dir>/checkpoint.txt)");
    eval_cmd->add_option("--split", eval_args.split, "train, val or test")->capture_default_str();
    eval_cmd->add_option("--stride", eval_args.stride, "Window stride")->capture_default_str();

    VerifyArgs verify_args;
    auto* verify_cmd = app.add_subcommand("verify", "Check the attention reconstruction identity on random instances");
    verify_cmd->add_option("--instances", verify_args.instances, "Number of instances")->capture_default_str();
    verify_cmd->add_option("--seed", verify_args.seed, "Instance seed")->capture_default_str();
    verify_cmd->add_option("--tolerance", verify_args.tolerance, "Max-abs tolerance")->capture_default_str();
    verify_cmd->add_option("--report", verify_args.report, "Write a JSON report here");
    verify_cmd->add_flag("--force", verify_args.force, "Overwrite an existing report");

    StationarityArgs stat_args;
    auto* stat_cmd = app.add_subcommand("stationarity", "ADF statistics per variable of a CSV file");
    stat_cmd->add_option("csv", stat_args.csv, "CSV file")->required();
    stat_cmd->add_option("--missing", stat_args.missing, "strict or forward_fill")->capture_default_str();
    stat_cmd->add_option("--lag", stat_args.lag, "Fixed lag (default: Schwert rule)");

    RunOptions ablate_opts;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate all five attention variants");
    add_run_options(ablate_cmd, ablate_opts);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("gen-synth", "Write a synthetic series as CSV");
    synth_cmd->add_option("--output", synth.output, "CSV file")->required();
    synth_cmd->add_option("--kind", synth.kind, "trend_seasonal, regime_scale, random_walk, ar1, white_noise")
        ->capture_default_str();
    synth_cmd->add_option("--length", synth.spec.length, "Rows")->capture_default_str();
    synth_cmd->add_option("--channels", synth.spec.channels, "Columns")->capture_default_str();
    synth_cmd->add_option("--seed", synth.spec.seed, "Seed")->capture_default_str();
    synth_cmd->add_option("--noise-std", synth.spec.noise_std, "Noise standard deviation")->capture_default_str();
    synth_cmd->add_option("--phi", synth.spec.phi, "AR(1) coefficient")->capture_default_str();
    synth_cmd->add_option("--amplitude", synth.spec.amplitude, "Seasonal amplitude")->capture_default_str();
    synth_cmd->add_option("--period", synth.spec.period, "Seasonal period")->capture_default_str();
    synth_cmd->add_option("--trend-slope", synth.spec.trend_slope, "Trend per step")->capture_default_str();
    synth_cmd->add_option("--regimes", synth.spec.regimes, "Number of scale regimes")->capture_default_str();
    synth_cmd->add_option("--regime-scale-max", synth.spec.regime_scale_max, "Largest regime scale")
        ->capture_default_str();
    synth_cmd->add_option("--regime-level-max", synth.spec.regime_level_max, "Largest regime level shift")
        ->capture_default_str();
    synth_cmd->add_flag("--force", synth.force, "Overwrite an existing file");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train_cmd) {
            return cmd_train(train_opts, out, err);
        }
        if (*eval_cmd) {
            return cmd_eval(eval_args, out, err);
        }
        if (*verify_cmd) {
            return cmd_verify(verify_args, out, err);
        }
        if (*stat_cmd) {
            return cmd_stationarity(stat_args, out, err);
        }
        if (*ablate_cmd) {
            return cmd_ablate(ablate_opts, out, err);
        }
        return cmd_gen_synth(synth, out, err);
    } catch (const ConfigError& e) {
        fmt::print(err, "config error: {}\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kExitRuntime;
    }
}

} // namespace nst::cli
