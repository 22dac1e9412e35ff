#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "arc/config.hpp"
#include "arc/data.hpp"
#include "arc/model.hpp"
#include "arc/probe.hpp"
#include "arc/trainer.hpp"

namespace arc::cli {

namespace detail {

struct FlagOverrides {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<int> seeds;
    std::optional<double> alpha, beta, temperature, shortcut;
    std::optional<std::string> teacher, out, data, mode, checkpoint;
};

inline void add_common_flags(CLI::App* cmd, FlagOverrides& flags) {
    cmd->add_option("--config", flags.config, "config file (object notation)");
    cmd->add_option("--seed", flags.seed, "base seed");
    cmd->add_option("--seeds", flags.seeds, "number of seeds to run");
    cmd->add_option("--alpha", flags.alpha, "logit-distillation weight in [0,1]");
    cmd->add_option("--beta", flags.beta, "feature-distillation weight in [0,1]");
    cmd->add_option("--temperature", flags.temperature, "softening temperature (> 0)");
    cmd->add_option("--shortcut", flags.shortcut, "dataset shortcut strength in [0,1]");
    cmd->add_option("--teacher", flags.teacher, "teacher checkpoint path");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--data", flags.data, "dataset directory");
    cmd->add_option("--mode", flags.mode, "eval mode: standard|answer_only|paraphrased");
    cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint to evaluate or probe");
}

inline RunConfig resolve_config(const FlagOverrides& flags) {
    RunConfig cfg = flags.config ? load_config(*flags.config) : RunConfig{};
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.seeds) cfg.seeds = *flags.seeds;
    if (flags.alpha) cfg.train.loss.alpha = *flags.alpha;
    if (flags.beta) cfg.train.loss.beta = *flags.beta;
    if (flags.temperature) cfg.train.loss.temperature = *flags.temperature;
    if (flags.shortcut) cfg.dataset.shortcut_strength = *flags.shortcut;
    if (flags.teacher) cfg.teacher_path = *flags.teacher;
    if (flags.out) cfg.out_dir = *flags.out;
    if (flags.data) cfg.data_dir = *flags.data;
    if (flags.mode) cfg.mode = *flags.mode;
    if (flags.checkpoint) cfg.checkpoint_path = *flags.checkpoint;
    if (cfg.seeds < 1) throw ConfigError("seeds must be at least 1");
    return cfg;
}

inline std::string train_path(const RunConfig& cfg) { return cfg.data_dir + "/train.jsonl"; }
inline std::string val_path(const RunConfig& cfg) { return cfg.data_dir + "/val.jsonl"; }

inline double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline std::string default_checkpoint(const RunConfig& cfg) {
    return cfg.out_dir + "/seed_" + std::to_string(cfg.seed) + "/arc.ckpt";
}

struct LoadedModels {
    Checkpoint ckpt;
    EvalModels models;
};

inline LoadedModels load_models(const std::string& path) {
    LoadedModels out;
    out.ckpt = load_checkpoint(path);
    out.models.answering = out.ckpt.find(BranchKind::Answering);
    out.models.reasoning = out.ckpt.find(BranchKind::Reasoning);
    out.models.teacher = out.ckpt.find(BranchKind::Teacher);
    return out;
}

}  // namespace detail

inline int cmd_gen(const RunConfig& cfg, std::ostream& out) {
    DatasetSpec spec = cfg.dataset;
    spec.seed = cfg.seed;
    spec.synonym_pairs.clear();
    spec = with_synonym_pairs(spec, cfg.synonym_fraction);
    spec.validate();
    auto [train, val] = generate_dataset(spec);
    std::filesystem::create_directories(cfg.data_dir);
    write_dataset(detail::train_path(cfg), spec, train);
    write_dataset(detail::val_path(cfg), spec, val);
    OverlapStats train_stats = overlap_stats(train);
    out << "wrote " << detail::train_path(cfg) << " (" << train.size() << " instances) and "
        << detail::val_path(cfg) << " (" << val.size() << " instances)\n";
    out << "shortcut_strength " << spec.shortcut_strength << "  overlap_tokens "
        << spec.overlap_tokens << "  synonym_pairs " << spec.synonym_pairs.size() << '\n';
    out << "mean gold answer-rationale overlap " << train_stats.mean_gold_overlap
        << "  mean distractor overlap " << train_stats.mean_distractor_overlap << '\n';
    return 0;
}

inline int cmd_train(const RunConfig& cfg, std::ostream& out) {
    std::vector<Instance> train_split, val_split;
    DatasetSpec spec = read_dataset(detail::train_path(cfg), train_split);
    read_dataset(detail::val_path(cfg), val_split);

    ModelConfig model_cfg = cfg.model;
    model_cfg.vocab_size = spec.vocab_size;
    bool baseline = cfg.train.loss.alpha == 0.0 && cfg.train.loss.beta == 0.0;

    std::optional<Checkpoint> external_teacher;
    if (!cfg.teacher_path.empty()) {
        external_teacher = load_checkpoint(cfg.teacher_path);
        const BranchModel* t = external_teacher->find(BranchKind::Teacher);
        if (!t) throw StateError("checkpoint " + cfg.teacher_path + " carries no teacher branch");
        if (t->config.vocab_size != model_cfg.vocab_size ||
            t->config.embed_dim != model_cfg.embed_dim ||
            t->config.hidden_dim != model_cfg.hidden_dim)
            throw ConfigError("teacher checkpoint shape does not match the model config");
    }

    std::vector<MetricsRecord> finals;
    for (int run = 0; run < cfg.seeds; ++run) {
        std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(run);
        TrainConfig train_cfg = cfg.train;
        train_cfg.seed = seed;
        RunConfig snapshot_cfg = cfg;
        snapshot_cfg.seed = seed;
        nlohmann::ordered_json snapshot = config_to_json(snapshot_cfg);

        std::string run_dir = cfg.out_dir + "/seed_" + std::to_string(seed);
        std::filesystem::create_directories(run_dir);
        std::ofstream log(run_dir + "/metrics.jsonl", std::ios::binary);
        if (!log) throw IoError("cannot open " + run_dir + "/metrics.jsonl");

        const BranchModel* teacher = nullptr;
        BranchModel teacher_storage;
        if (external_teacher) {
            teacher = external_teacher->find(BranchKind::Teacher);
        } else if (!baseline) {
            TrainResult stage1 = train_teacher(train_split, val_split, model_cfg, train_cfg);
            for (const MetricsRecord& m : stage1.history) {
                nlohmann::ordered_json line = metrics_to_json(m);
                line["stage"] = 1;
                log << line.dump() << '\n';
            }
            stage1.best.config_snapshot = snapshot;
            save_checkpoint(run_dir + "/teacher.ckpt", stage1.best);
            teacher_storage = stage1.best.branches[0];
            teacher = &teacher_storage;
        }

        TrainResult stage2 = train_arc(train_split, val_split, teacher, model_cfg, train_cfg);
        for (const MetricsRecord& m : stage2.history) {
            nlohmann::ordered_json line = metrics_to_json(m);
            line["stage"] = 2;
            log << line.dump() << '\n';
        }
        stage2.best.config_snapshot = snapshot;
        save_checkpoint(run_dir + "/arc.ckpt", stage2.best);

        const MetricsRecord& best =
            stage2.history[static_cast<std::size_t>(stage2.best_epoch)];
        finals.push_back(best);
        out << "seed " << seed << (baseline ? " [baseline (separate)]" : " [arc]")
            << " best epoch " << stage2.best_epoch << ": qa " << best.acc_answer << " qar "
            << best.acc_rationale << " joint " << best.acc_joint;
        if (best.acc_teacher) out << " teacher " << *best.acc_teacher;
        out << '\n';
    }

    if (cfg.seeds > 1) {
        std::vector<double> qa, qar, joint;
        for (const MetricsRecord& m : finals) {
            qa.push_back(m.acc_answer);
            qar.push_back(m.acc_rationale);
            joint.push_back(m.acc_joint);
        }
        out << "median over " << cfg.seeds << " seeds: qa " << detail::median(qa) << " qar "
            << detail::median(qar) << " joint " << detail::median(joint) << '\n';
    }
    return 0;
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    std::vector<Instance> val_split;
    DatasetSpec spec = read_dataset(detail::val_path(cfg), val_split);
    std::string ckpt_path =
        cfg.checkpoint_path.empty() ? detail::default_checkpoint(cfg) : cfg.checkpoint_path;
    detail::LoadedModels loaded = detail::load_models(ckpt_path);

    EvalMode mode = eval_mode_from_string(cfg.mode);
    SynonymMap map(spec.synonym_pairs);
    MetricsRecord rec = evaluate(loaded.models, val_split, mode, &map, "val");
    nlohmann::ordered_json line = metrics_to_json(rec);
    line["mode"] = cfg.mode;
    out << line.dump() << '\n';

    std::filesystem::create_directories(cfg.out_dir);
    std::string report_path = cfg.out_dir + "/eval_" + cfg.mode + ".json";
    std::ofstream report(report_path, std::ios::binary);
    if (!report) throw IoError("cannot open " + report_path);
    nlohmann::ordered_json full = line;
    full["config"] = loaded.ckpt.config_snapshot;
    report << full.dump(2) << '\n';
    return 0;
}

inline int cmd_probe(const RunConfig& cfg, std::ostream& out) {
    std::vector<Instance> val_split;
    DatasetSpec spec = read_dataset(detail::val_path(cfg), val_split);
    std::string ckpt_path =
        cfg.checkpoint_path.empty() ? detail::default_checkpoint(cfg) : cfg.checkpoint_path;
    detail::LoadedModels loaded = detail::load_models(ckpt_path);
    if (!loaded.models.reasoning)
        throw StateError("checkpoint " + ckpt_path + " carries no reasoning branch");

    SynonymMap map(spec.synonym_pairs);
    ProbeReport report =
        build_probe_report(loaded.models, val_split, map, loaded.ckpt.config_snapshot);

    std::filesystem::create_directories(cfg.out_dir);
    std::string report_path = cfg.out_dir + "/probe_report.csv";
    emit_report(report, report_path);
    out << render_report_table(report);
    out << "report written to " << report_path << '\n';
    return 0;
}

/// Entry point shared by the binary and the in-process tests.
/// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
    CLI::App app{"synthetic multiple-choice reasoning benchmark: answer/rationale coupling "
                 "via a proxy-branch distillation framework"};
    app.require_subcommand(1);
    detail::FlagOverrides flags;
    CLI::App* gen = app.add_subcommand("gen", "generate dataset files");
    CLI::App* train = app.add_subcommand("train", "two-stage training");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    CLI::App* probe = app.add_subcommand("probe", "shortcut and skew diagnostics");
    for (CLI::App* cmd : {gen, train, eval, probe}) detail::add_common_flags(cmd, flags);

    std::vector<const char*> argv;
    argv.push_back("arc");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 1;
    }

    try {
        RunConfig cfg = detail::resolve_config(flags);
        if (gen->parsed()) return cmd_gen(cfg, out);
        if (train->parsed()) return cmd_train(cfg, out);
        if (eval->parsed()) return cmd_eval(cfg, out);
        if (probe->parsed()) return cmd_probe(cfg, out);
        err << "no command selected\n";
        return 1;
    } catch (const ConfigError& e) {
        err << e.what() << '\n';
        return 1;
    } catch (const ParamError& e) {
        err << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return 2;
    }
}

}  // namespace arc::cli
