#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "arc/autodiff.hpp"
#include "arc/common.hpp"

namespace arc {

/// Mixing weights for the two distillation losses and the softening
/// temperature. `t_squared_scaling` applies the conventional T^2 gradient
/// correction to the logit-distillation term; `scaled_feature_scores`
/// divides feature similarity scores by sqrt(d_h). Both are off by default.
struct LossWeights {
    double alpha = 0.5;
    double beta = 0.5;
    double temperature = 2.0;
    bool t_squared_scaling = false;
    bool scaled_feature_scores = false;

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0)
            throw ParamError("alpha must be in [0,1], got " + std::to_string(alpha));
        if (beta < 0.0 || beta > 1.0)
            throw ParamError("beta must be in [0,1], got " + std::to_string(beta));
        if (temperature <= 0.0)
            throw ParamError("temperature must be positive, got " + std::to_string(temperature));
    }
};

/// All per-batch loss terms. `total` is the trainable objective; the pieces
/// are kept for logging and tests.
struct LossBreakdown {
    Variable answer_ce;      // cross-entropy of the answering branch
    Variable rationale_ce;   // cross-entropy of the reasoning branch
    Variable logit_kd;       // teacher->answering logit distillation
    Variable feature_kd;     // teacher->reasoning feature distillation
    Variable answer_total;   // alpha * logit_kd + (1-alpha) * answer_ce
    Variable rationale_total;  // beta * feature_kd + (1-beta) * rationale_ce
    Variable total;          // answer_total + rationale_total
};

/// -log softmax(logits)[gold]
inline Variable cross_entropy_loss(const Variable& logits, int gold) {
    const Tensor& lv = logits.value();
    if (lv.rank() != 1) throw ShapeError("cross_entropy_loss: logits must be rank 1");
    if (gold < 0 || gold >= lv.dim(0))
        throw ParamError("cross_entropy_loss: gold index " + std::to_string(gold) +
                         " outside [0, " + std::to_string(lv.dim(0)) + ")");
    return scale(pick(log_softmax(logits), gold), -1.0);
}

/// KL(p_teacher || p_student) over temperature-softened distributions.
/// Teacher logits are detached: no gradient reaches them. Gibbs' inequality
/// keeps the value non-negative; it is zero iff the softened distributions
/// coincide.
inline Variable logit_distillation_loss(const Variable& teacher_logits,
                                        const Variable& student_logits, double temperature,
                                        bool t_squared_scaling = false) {
    if (temperature <= 0.0)
        throw ParamError("logit_distillation_loss: temperature must be positive, got " +
                         std::to_string(temperature));
    if (teacher_logits.value().shape() != student_logits.value().shape())
        throw ShapeError("logit_distillation_loss: teacher " + teacher_logits.value().shape_str() +
                         " vs student " + student_logits.value().shape_str());
    Variable teacher = detach(teacher_logits);
    Variable p_teacher = softmax_t(teacher, temperature);
    double inv_t = 1.0 / temperature;
    Variable log_p_teacher = log_softmax(scale(teacher, inv_t));
    Variable log_p_student = log_softmax(scale(student_logits, inv_t));
    Variable kl = dot(detach(p_teacher), sub(log_p_teacher, log_p_student));
    if (t_squared_scaling) kl = scale(kl, temperature * temperature);
    return kl;
}

/// Cross-entropy over dot-product similarities between the (detached)
/// teacher fused feature and each candidate fused feature of the reasoning
/// branch, supervised by the rationale label.
inline Variable feature_distillation_loss(const Variable& teacher_feature,
                                          const std::vector<Variable>& candidate_features,
                                          int rationale_gold, bool scaled_scores = false) {
    if (candidate_features.empty())
        throw ShapeError("feature_distillation_loss: no candidate features");
    if (rationale_gold < 0 || rationale_gold >= static_cast<int>(candidate_features.size()))
        throw ParamError("feature_distillation_loss: gold index " +
                         std::to_string(rationale_gold) + " outside [0, " +
                         std::to_string(candidate_features.size()) + ")");
    Variable teacher = detach(teacher_feature);
    for (const Variable& h : candidate_features)
        if (h.value().shape() != teacher.value().shape())
            throw ShapeError("feature_distillation_loss: teacher " + teacher.value().shape_str() +
                             " vs candidate " + h.value().shape_str());
    std::vector<Variable> scores;
    scores.reserve(candidate_features.size());
    double score_scale =
        scaled_scores ? 1.0 / std::sqrt(static_cast<double>(teacher.value().numel())) : 1.0;
    for (const Variable& h : candidate_features) {
        Variable s = dot(teacher, h);
        if (scaled_scores) s = scale(s, score_scale);
        scores.push_back(s);
    }
    return cross_entropy_loss(stack(scores), rationale_gold);
}

/// Mixes the four per-branch terms into the two branch objectives and their
/// sum. Inputs must be scalar Variables on one tape.
inline LossBreakdown combine_losses(const Variable& answer_ce, const Variable& rationale_ce,
                                    const Variable& logit_kd, const Variable& feature_kd,
                                    const LossWeights& w) {
    w.validate();
    LossBreakdown out;
    out.answer_ce = answer_ce;
    out.rationale_ce = rationale_ce;
    out.logit_kd = logit_kd;
    out.feature_kd = feature_kd;
    out.answer_total = add(scale(logit_kd, w.alpha), scale(answer_ce, 1.0 - w.alpha));
    out.rationale_total = add(scale(feature_kd, w.beta), scale(rationale_ce, 1.0 - w.beta));
    out.total = add(out.answer_total, out.rationale_total);
    return out;
}

}  // namespace arc
