#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "arc/common.hpp"
#include "arc/data.hpp"
#include "arc/model.hpp"
#include "arc/trainer.hpp"

namespace arc {

/// Declarative run configuration: dataset spec, model dims, training
/// hyperparameters, loss weights, and paths. File values are overridden by
/// command-line flags; the merged snapshot is embedded in every checkpoint
/// and report.
struct RunConfig {
    DatasetSpec dataset;
    double synonym_fraction = 0.3;
    ModelConfig model;  // vocab_size is taken from the dataset spec
    TrainConfig train;
    std::uint64_t seed = 1;
    int seeds = 1;
    std::string data_dir = "data";
    std::string out_dir = "out";
    std::string teacher_path;
    std::string checkpoint_path;
    std::string mode = "standard";
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(
        j, {"dataset", "model", "train", "loss", "paths", "seed", "seeds", "mode"}, "config");
    RunConfig cfg;
    if (j.contains("dataset")) {
        nlohmann::json ds = j.at("dataset");
        if (ds.contains("synonym_fraction")) {
            cfg.synonym_fraction = ds.at("synonym_fraction").get<double>();
            ds.erase("synonym_fraction");
        }
        cfg.dataset = spec_from_json(ds);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m, {"embed_dim", "hidden_dim"}, "model");
        cfg.model.embed_dim = m.value("embed_dim", cfg.model.embed_dim);
        cfg.model.hidden_dim = m.value("hidden_dim", cfg.model.hidden_dim);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown(t,
                               {"learning_rate", "weight_decay", "momentum_beta",
                                "second_moment_beta", "adam_epsilon", "lr_halving_patience",
                                "batch_size", "max_epochs", "early_stop_patience"},
                               "train");
        cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
        cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
        cfg.train.momentum_beta = t.value("momentum_beta", cfg.train.momentum_beta);
        cfg.train.second_moment_beta =
            t.value("second_moment_beta", cfg.train.second_moment_beta);
        cfg.train.adam_epsilon = t.value("adam_epsilon", cfg.train.adam_epsilon);
        cfg.train.lr_halving_patience =
            t.value("lr_halving_patience", cfg.train.lr_halving_patience);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
        cfg.train.early_stop_patience =
            t.value("early_stop_patience", cfg.train.early_stop_patience);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        detail::reject_unknown(
            l, {"alpha", "beta", "temperature", "t_squared_scaling", "scaled_feature_scores"},
            "loss");
        cfg.train.loss.alpha = l.value("alpha", cfg.train.loss.alpha);
        cfg.train.loss.beta = l.value("beta", cfg.train.loss.beta);
        cfg.train.loss.temperature = l.value("temperature", cfg.train.loss.temperature);
        cfg.train.loss.t_squared_scaling =
            l.value("t_squared_scaling", cfg.train.loss.t_squared_scaling);
        cfg.train.loss.scaled_feature_scores =
            l.value("scaled_feature_scores", cfg.train.loss.scaled_feature_scores);
    }
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        detail::reject_unknown(p, {"data_dir", "out_dir", "teacher", "checkpoint"}, "paths");
        cfg.data_dir = p.value("data_dir", cfg.data_dir);
        cfg.out_dir = p.value("out_dir", cfg.out_dir);
        cfg.teacher_path = p.value("teacher", cfg.teacher_path);
        cfg.checkpoint_path = p.value("checkpoint", cfg.checkpoint_path);
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.seeds = j.value("seeds", cfg.seeds);
    cfg.mode = j.value("mode", cfg.mode);
    if (cfg.seeds < 1) throw ConfigError("seeds must be at least 1");
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    return config_from_json(j);
}

inline nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json ds = spec_to_json(cfg.dataset);
    ds["synonym_fraction"] = cfg.synonym_fraction;
    j["dataset"] = ds;
    j["model"] = {{"embed_dim", cfg.model.embed_dim}, {"hidden_dim", cfg.model.hidden_dim}};
    j["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"weight_decay", cfg.train.weight_decay},
                  {"momentum_beta", cfg.train.momentum_beta},
                  {"second_moment_beta", cfg.train.second_moment_beta},
                  {"adam_epsilon", cfg.train.adam_epsilon},
                  {"lr_halving_patience", cfg.train.lr_halving_patience},
                  {"batch_size", cfg.train.batch_size},
                  {"max_epochs", cfg.train.max_epochs},
                  {"early_stop_patience", cfg.train.early_stop_patience}};
    j["loss"] = {{"alpha", cfg.train.loss.alpha},
                 {"beta", cfg.train.loss.beta},
                 {"temperature", cfg.train.loss.temperature},
                 {"t_squared_scaling", cfg.train.loss.t_squared_scaling},
                 {"scaled_feature_scores", cfg.train.loss.scaled_feature_scores}};
    j["paths"] = {{"data_dir", cfg.data_dir},
                  {"out_dir", cfg.out_dir},
                  {"teacher", cfg.teacher_path},
                  {"checkpoint", cfg.checkpoint_path}};
    j["seed"] = cfg.seed;
    j["seeds"] = cfg.seeds;
    j["mode"] = cfg.mode;
    return j;
}

}  // namespace arc
