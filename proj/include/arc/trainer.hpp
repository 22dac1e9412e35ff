#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "arc/autodiff.hpp"
#include "arc/common.hpp"
#include "arc/data.hpp"
#include "arc/losses.hpp"
#include "arc/model.hpp"

namespace arc {

struct TrainConfig {
    double learning_rate = 2e-4;
    double weight_decay = 1e-4;
    double momentum_beta = 0.9;
    double second_moment_beta = 0.999;
    double adam_epsilon = 1e-8;
    int lr_halving_patience = 2;  // stagnant epochs before halving
    int batch_size = 8;
    int max_epochs = 60;  // per stage
    int early_stop_patience = 6;
    std::uint64_t seed = 1;
    LossWeights loss;

    void validate() const {
        if (learning_rate <= 0.0 || weight_decay < 0.0 || adam_epsilon <= 0.0)
            throw ConfigError("learning_rate/adam_epsilon must be positive, weight_decay >= 0");
        if (momentum_beta <= 0.0 || momentum_beta >= 1.0 || second_moment_beta <= 0.0 ||
            second_moment_beta >= 1.0)
            throw ConfigError("moment decay rates must lie in (0,1)");
        if (lr_halving_patience < 1 || early_stop_patience < 1)
            throw ConfigError("patience values must be at least 1");
        if (batch_size < 1 || max_epochs < 1)
            throw ConfigError("batch_size and max_epochs must be at least 1");
        loss.validate();
    }
};

/// Adaptive-moment optimizer with decoupled weight decay. Parameter order is
/// fixed at construction; step() consumes gradients in the same order.
class AdamW {
  public:
    AdamW(std::vector<Tensor*> params, const TrainConfig& cfg)
        : params_(std::move(params)),
          lr_(cfg.learning_rate),
          weight_decay_(cfg.weight_decay),
          beta1_(cfg.momentum_beta),
          beta2_(cfg.second_moment_beta),
          eps_(cfg.adam_epsilon) {
        for (Tensor* p : params_) {
            first_.push_back(Tensor::zeros(p->shape()));
            second_.push_back(Tensor::zeros(p->shape()));
        }
    }

    void step(const std::vector<const Tensor*>& grads) {
        if (grads.size() != params_.size())
            throw ParamError("optimizer step: expected " + std::to_string(params_.size()) +
                             " gradients, got " + std::to_string(grads.size()));
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = *params_[i];
            const Tensor& g = *grads[i];
            if (!g.same_shape(p))
                throw ShapeError("optimizer step: gradient " + g.shape_str() +
                                 " vs parameter " + p.shape_str());
            Tensor& m = first_[i];
            Tensor& v = second_[i];
            for (std::size_t k = 0; k < p.numel(); ++k) {
                m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
                v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
                double m_hat = m[k] / bc1;
                double v_hat = v[k] / bc2;
                p[k] -= lr_ * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay_ * p[k]);
            }
        }
    }

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

  private:
    std::vector<Tensor*> params_;
    std::vector<Tensor> first_, second_;
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

enum class EvalMode { Standard, AnswerOnly, Paraphrased };

inline const char* eval_mode_name(EvalMode mode) {
    switch (mode) {
        case EvalMode::Standard: return "standard";
        case EvalMode::AnswerOnly: return "answer_only";
        case EvalMode::Paraphrased: return "paraphrased";
    }
    return "?";
}

inline EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "standard") return EvalMode::Standard;
    if (s == "answer_only") return EvalMode::AnswerOnly;
    if (s == "paraphrased") return EvalMode::Paraphrased;
    throw ConfigError("unknown eval mode \"" + s + "\"");
}

struct MetricsRecord {
    double acc_answer = 0.0;     // Q->A
    double acc_rationale = 0.0;  // QA->R
    double acc_joint = 0.0;      // Q->AR, both right
    std::optional<double> acc_teacher;  // QR->A when a teacher is supplied
    int epoch = -1;
    std::string split = "val";
};

inline nlohmann::ordered_json metrics_to_json(const MetricsRecord& m) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["split"] = m.split;
    j["acc_qa"] = m.acc_answer;
    j["acc_qar"] = m.acc_rationale;
    j["acc_joint"] = m.acc_joint;
    if (m.acc_teacher)
        j["acc_teacher"] = *m.acc_teacher;
    else
        j["acc_teacher"] = nullptr;
    return j;
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
    MetricsRecord m;
    m.epoch = j.at("epoch").get<int>();
    m.split = j.at("split").get<std::string>();
    m.acc_answer = j.at("acc_qa").get<double>();
    m.acc_rationale = j.at("acc_qar").get<double>();
    m.acc_joint = j.at("acc_joint").get<double>();
    if (j.contains("acc_teacher") && !j.at("acc_teacher").is_null())
        m.acc_teacher = j.at("acc_teacher").get<double>();
    return m;
}

struct EvalModels {
    const BranchModel* answering = nullptr;
    const BranchModel* reasoning = nullptr;
    const BranchModel* teacher = nullptr;
};

inline Instance apply_mode(const Instance& inst, EvalMode mode, const SynonymMap* map) {
    switch (mode) {
        case EvalMode::Standard: return inst;
        case EvalMode::AnswerOnly: return strip_question(inst);
        case EvalMode::Paraphrased:
            if (!map) throw ParamError("paraphrased evaluation requires a synonym map");
            return paraphrase(inst, *map);
    }
    return inst;
}

/// Accuracy metrics over a frozen split. The deployed pair is f^A and f^R;
/// the teacher is scored only when supplied and never contributes to their
/// predictions.
inline MetricsRecord evaluate(const EvalModels& models, const std::vector<Instance>& split,
                              EvalMode mode, const SynonymMap* map = nullptr,
                              const std::string& split_name = "val", int epoch = -1) {
    if (split.empty()) throw ParamError("evaluate: empty split");
    MetricsRecord rec;
    rec.split = split_name;
    rec.epoch = epoch;
    long answer_hits = 0, rationale_hits = 0, joint_hits = 0, teacher_hits = 0;
    for (const Instance& raw : split) {
        Instance inst = apply_mode(raw, mode, map);
        bool answer_ok = false, rationale_ok = false;
        if (models.answering) {
            Tape tape;
            auto out = forward(tape, *models.answering,
                               compose_query(BranchKind::Answering, inst));
            answer_ok = predict(out) == inst.answer_label;
        }
        if (models.reasoning) {
            Tape tape;
            auto out = forward(tape, *models.reasoning,
                               compose_query(BranchKind::Reasoning, inst));
            rationale_ok = predict(out) == inst.rationale_label;
        }
        if (models.teacher) {
            Tape tape;
            auto out = forward(tape, *models.teacher, compose_query(BranchKind::Teacher, inst));
            if (predict(out) == inst.answer_label) ++teacher_hits;
        }
        answer_hits += answer_ok;
        rationale_hits += rationale_ok;
        joint_hits += answer_ok && rationale_ok;
    }
    double n = static_cast<double>(split.size());
    rec.acc_answer = static_cast<double>(answer_hits) / n;
    rec.acc_rationale = static_cast<double>(rationale_hits) / n;
    rec.acc_joint = static_cast<double>(joint_hits) / n;
    if (models.teacher) rec.acc_teacher = static_cast<double>(teacher_hits) / n;
    return rec;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

constexpr const char* kCheckpointMagic = "ARCKD1";

struct Checkpoint {
    std::vector<BranchModel> branches;  // one to three, labeled by kind
    nlohmann::json config_snapshot;     // provenance
    int epoch = 0;
    std::vector<MetricsRecord> history;

    const BranchModel* find(BranchKind kind) const {
        for (const BranchModel& b : branches)
            if (b.kind == kind) return &b;
        return nullptr;
    }
};

namespace detail {

inline void write_le_doubles(std::ofstream& out, const Tensor& t) {
    for (double v : t.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
        out.write(buf, 8);
    }
}

inline void read_le_doubles(std::ifstream& in, Tensor& t, const std::string& path) {
    for (double& v : t.data()) {
        char buf[8];
        in.read(buf, 8);
        if (in.gcount() != 8) throw IoError(path + ": checkpoint payload truncated");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
        std::memcpy(&v, &bits, sizeof(v));
    }
}

inline BranchKind branch_kind_from_string(const std::string& s) {
    if (s == "answering") return BranchKind::Answering;
    if (s == "reasoning") return BranchKind::Reasoning;
    if (s == "teacher") return BranchKind::Teacher;
    throw ParseError("unknown branch kind \"" + s + "\"");
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    nlohmann::ordered_json manifest;
    manifest["config"] = ckpt.config_snapshot;
    manifest["epoch"] = ckpt.epoch;
    nlohmann::ordered_json metrics = nlohmann::ordered_json::array();
    for (const MetricsRecord& m : ckpt.history) metrics.push_back(metrics_to_json(m));
    manifest["metrics"] = metrics;
    nlohmann::ordered_json branches = nlohmann::ordered_json::array();
    for (const BranchModel& b : ckpt.branches) {
        nlohmann::ordered_json jb;
        jb["kind"] = branch_name(b.kind);
        jb["model_config"] = {{"vocab_size", b.config.vocab_size},
                              {"embed_dim", b.config.embed_dim},
                              {"hidden_dim", b.config.hidden_dim}};
        nlohmann::ordered_json params = nlohmann::ordered_json::array();
        auto ps = b.params();
        for (std::size_t i = 0; i < ps.size(); ++i)
            params.push_back({{"name", BranchModel::param_names()[i]},
                              {"shape", ps[i]->shape()}});
        jb["params"] = params;
        branches.push_back(jb);
    }
    manifest["branches"] = branches;
    out << kCheckpointMagic << '\n' << manifest.dump() << '\n';
    for (const BranchModel& b : ckpt.branches)
        for (const Tensor* p : b.params()) detail::write_le_doubles(out, *p);
    if (!out) throw IoError("failed while writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    std::string magic;
    if (!std::getline(in, magic) || magic != kCheckpointMagic)
        throw ParseError(path + ": checkpoint version mismatch (expected " +
                         std::string(kCheckpointMagic) + ")");
    std::string manifest_line;
    if (!std::getline(in, manifest_line)) throw ParseError(path + ": missing manifest");
    Checkpoint ckpt;
    try {
        nlohmann::json manifest = nlohmann::json::parse(manifest_line);
        ckpt.config_snapshot = manifest.value("config", nlohmann::json::object());
        ckpt.epoch = manifest.value("epoch", 0);
        for (const auto& jm : manifest.value("metrics", nlohmann::json::array()))
            ckpt.history.push_back(metrics_from_json(jm));
        for (const auto& jb : manifest.at("branches")) {
            ModelConfig cfg;
            cfg.vocab_size = jb.at("model_config").at("vocab_size").get<int>();
            cfg.embed_dim = jb.at("model_config").at("embed_dim").get<int>();
            cfg.hidden_dim = jb.at("model_config").at("hidden_dim").get<int>();
            BranchModel model = BranchModel::zeros(
                detail::branch_kind_from_string(jb.at("kind").get<std::string>()), cfg);
            auto ps = model.params();
            const auto& params = jb.at("params");
            if (params.size() != ps.size())
                throw ParseError(path + ": manifest parameter count mismatch");
            for (std::size_t i = 0; i < ps.size(); ++i) {
                auto shape = params[static_cast<int>(i)].at("shape").get<std::vector<int>>();
                if (shape != ps[i]->shape())
                    throw ParseError(path + ": parameter " + BranchModel::param_names()[i] +
                                     " shape mismatch");
            }
            ckpt.branches.push_back(std::move(model));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": corrupt manifest: " + e.what());
    }
    for (BranchModel& b : ckpt.branches)
        for (Tensor* p : b.params()) detail::read_le_doubles(in, *p, path);
    char extra;
    if (in.read(&extra, 1) && in.gcount() == 1)
        throw ParseError(path + ": trailing bytes after checkpoint payload");
    return ckpt;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct TrainResult {
    Checkpoint best;                     // best-validation snapshot
    Checkpoint final_state;              // parameters after the last epoch
    std::vector<MetricsRecord> history;  // one record per epoch
    std::vector<double> train_losses;    // mean batch loss per epoch
    int best_epoch = -1;
};

namespace detail {

// validation-driven learning-rate halving and early stop. Halving watches
// whether accuracy is increasing epoch over epoch; stopping and checkpoint
// selection watch the best value seen.
struct Schedule {
    double best_metric = -1.0;
    double previous_metric = -1.0;
    int stagnant = 0;
    int since_best = 0;

    // returns true when training should stop
    bool observe(double metric, AdamW& opt, const TrainConfig& cfg) {
        if (metric > previous_metric) {
            stagnant = 0;
        } else {
            ++stagnant;
            if (stagnant >= cfg.lr_halving_patience) {
                opt.set_learning_rate(opt.learning_rate() * 0.5);
                stagnant = 0;
            }
        }
        previous_metric = metric;
        if (metric > best_metric) {
            best_metric = metric;
            since_best = 0;
            return false;
        }
        ++since_best;
        return since_best >= cfg.early_stop_patience;
    }
};

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.next_below(i))]);
    return idx;
}

}  // namespace detail

/// Stage one: train f^C alone with cross-entropy until its validation
/// accuracy stops improving. Returns the best-validation checkpoint.
inline TrainResult train_teacher(const std::vector<Instance>& train_split,
                                 const std::vector<Instance>& val_split,
                                 const ModelConfig& model_cfg, const TrainConfig& cfg) {
    cfg.validate();
    model_cfg.validate();
    if (train_split.empty() || val_split.empty())
        throw ParamError("train_teacher: empty split");

    BranchModel teacher = BranchModel::init(BranchKind::Teacher, model_cfg, cfg.seed);
    AdamW opt(teacher.params(), cfg);
    Rng shuffle_rng(derive_seed(cfg.seed, "stage1_shuffle"));
    detail::Schedule schedule;
    TrainResult result;
    BranchModel best = teacher;
    int best_epoch = -1;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        auto order = detail::shuffled_indices(train_split.size(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            try {
                Tape tape;
                BranchParams params = register_params(tape, teacher, true);
                Variable batch_loss;
                for (std::size_t k = start; k < end; ++k) {
                    const Instance& inst = train_split[order[k]];
                    auto out = forward(tape, params, compose_query(BranchKind::Teacher, inst));
                    Variable ce = cross_entropy_loss(out.logits, inst.answer_label);
                    batch_loss = k == start ? ce : add(batch_loss, ce);
                }
                batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
                double loss_value = batch_loss.value().item();
                if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
                tape.backward(batch_loss);
                std::vector<const Tensor*> grads;
                for (const Variable& v : param_handles(params)) grads.push_back(&v.grad());
                opt.step(grads);
                epoch_loss += loss_value;
                ++batches;
            } catch (const NumericError& e) {
                throw TrainError("teacher loss diverged at epoch " + std::to_string(epoch) +
                                 ": " + e.what());
            }
        }
        result.train_losses.push_back(epoch_loss / static_cast<double>(batches));

        EvalModels models;
        models.teacher = &teacher;
        MetricsRecord rec = evaluate(models, val_split, EvalMode::Standard, nullptr, "val", epoch);
        result.history.push_back(rec);
        double metric = *rec.acc_teacher;
        if (metric > schedule.best_metric) {
            best = teacher;
            best_epoch = epoch;
        }
        if (schedule.observe(metric, opt, cfg)) break;
    }

    result.final_state.branches.push_back(teacher);
    result.final_state.epoch = static_cast<int>(result.history.size()) - 1;
    result.best.branches.push_back(std::move(best));
    result.best.epoch = best_epoch;
    result.best.history = result.history;
    result.best_epoch = best_epoch;
    return result;
}

/// Stage two: joint training of f^A and f^R with the combined objective.
/// The teacher is frozen; it is required whenever alpha or beta is nonzero
/// and unused (and may be null) when both are zero.
inline TrainResult train_arc(const std::vector<Instance>& train_split,
                             const std::vector<Instance>& val_split, const BranchModel* teacher,
                             const ModelConfig& model_cfg, const TrainConfig& cfg) {
    cfg.validate();
    model_cfg.validate();
    if (train_split.empty() || val_split.empty()) throw ParamError("train_arc: empty split");
    const LossWeights& w = cfg.loss;
    bool use_logit_kd = w.alpha > 0.0;
    bool use_feature_kd = w.beta > 0.0;
    bool teacher_needed = use_logit_kd || use_feature_kd;
    if (teacher_needed && !teacher)
        throw StateError("train_arc: distillation weights are nonzero but no teacher was given");

    BranchModel answering = BranchModel::init(BranchKind::Answering, model_cfg, cfg.seed);
    BranchModel reasoning = BranchModel::init(BranchKind::Reasoning, model_cfg, cfg.seed);
    std::vector<Tensor*> trainable = answering.params();
    for (Tensor* p : reasoning.params()) trainable.push_back(p);
    AdamW opt(trainable, cfg);
    Rng shuffle_rng(derive_seed(cfg.seed, "stage2_shuffle"));
    detail::Schedule schedule;
    TrainResult result;
    BranchModel best_a = answering, best_r = reasoning;
    int best_epoch = -1;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        auto order = detail::shuffled_indices(train_split.size(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            try {
                Tape tape;
                BranchParams pa = register_params(tape, answering, true);
                BranchParams pr = register_params(tape, reasoning, true);
                BranchParams pc;
                if (teacher_needed) pc = register_params(tape, *teacher, false);

                Variable batch_loss;
                for (std::size_t k = start; k < end; ++k) {
                    const Instance& inst = train_split[order[k]];
                    auto out_a = forward(tape, pa, compose_query(BranchKind::Answering, inst));
                    auto out_r = forward(tape, pr, compose_query(BranchKind::Reasoning, inst));
                    Variable ce_a = cross_entropy_loss(out_a.logits, inst.answer_label);
                    Variable ce_r = cross_entropy_loss(out_r.logits, inst.rationale_label);
                    Variable kd_a = tape.constant(Tensor::scalar(0.0));
                    Variable kd_r = tape.constant(Tensor::scalar(0.0));
                    if (teacher_needed) {
                        auto out_c = forward(tape, pc, compose_query(BranchKind::Teacher, inst));
                        if (use_logit_kd)
                            kd_a = logit_distillation_loss(out_c.logits, out_a.logits,
                                                           w.temperature, w.t_squared_scaling);
                        if (use_feature_kd)
                            kd_r = feature_distillation_loss(
                                out_c.fused[static_cast<std::size_t>(inst.answer_label)],
                                out_r.fused, inst.rationale_label, w.scaled_feature_scores);
                    }
                    LossBreakdown parts = combine_losses(ce_a, ce_r, kd_a, kd_r, w);
                    batch_loss = k == start ? parts.total : add(batch_loss, parts.total);
                }
                batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
                double loss_value = batch_loss.value().item();
                if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
                tape.backward(batch_loss);
                std::vector<const Tensor*> grads;
                for (const Variable& v : param_handles(pa)) grads.push_back(&v.grad());
                for (const Variable& v : param_handles(pr)) grads.push_back(&v.grad());
                opt.step(grads);
                epoch_loss += loss_value;
                ++batches;
            } catch (const NumericError& e) {
                throw TrainError("loss diverged at epoch " + std::to_string(epoch) + ": " +
                                 e.what());
            }
        }
        result.train_losses.push_back(epoch_loss / static_cast<double>(batches));

        EvalModels models;
        models.answering = &answering;
        models.reasoning = &reasoning;
        models.teacher = teacher;
        MetricsRecord rec = evaluate(models, val_split, EvalMode::Standard, nullptr, "val", epoch);
        result.history.push_back(rec);
        if (rec.acc_joint > schedule.best_metric) {
            best_a = answering;
            best_r = reasoning;
            best_epoch = epoch;
        }
        if (schedule.observe(rec.acc_joint, opt, cfg)) break;
    }

    result.final_state.branches.push_back(answering);
    result.final_state.branches.push_back(reasoning);
    result.final_state.epoch = static_cast<int>(result.history.size()) - 1;
    result.best.branches.push_back(std::move(best_a));
    result.best.branches.push_back(std::move(best_r));
    if (teacher) result.best.branches.push_back(*teacher);
    result.best.epoch = best_epoch;
    result.best.history = result.history;
    result.best_epoch = best_epoch;
    return result;
}

}  // namespace arc
