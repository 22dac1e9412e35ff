#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "arc/autodiff.hpp"
#include "arc/common.hpp"
#include "arc/data.hpp"
#include "arc/tensor.hpp"

namespace arc {

/// The three process roles. They share one architecture; what differs is the
/// query/response composition built from an instance.
enum class BranchKind { Answering, Reasoning, Teacher };

inline const char* branch_name(BranchKind kind) {
    switch (kind) {
        case BranchKind::Answering: return "answering";
        case BranchKind::Reasoning: return "reasoning";
        case BranchKind::Teacher: return "teacher";
    }
    return "?";
}

struct ModelConfig {
    int vocab_size = 0;
    int embed_dim = 32;   // token/visual embedding width
    int hidden_dim = 32;  // fused feature width

    void validate() const {
        if (vocab_size <= 0) throw ConfigError("model vocab_size must be positive");
        if (embed_dim <= 0 || hidden_dim <= 0)
            throw ConfigError("model dims must be positive");
    }
};

/// Query/response composition for one branch on one instance. The query
/// prefix is always the (possibly stripped) question; Reasoning appends the
/// gold answer, Teacher appends the gold rationale.
struct QueryComposition {
    std::vector<int> query;
    int question_len = 0;  // tokens before the appended suffix
    int suffix_len = 0;    // appended gold-answer / gold-rationale tokens
    std::vector<std::vector<int>> responses;
    std::vector<SceneObject> objects;
    int gold = 0;  // label for the branch's response set
};

inline QueryComposition compose_query(BranchKind kind, const Instance& x) {
    QueryComposition comp;
    comp.query = x.question;
    comp.question_len = static_cast<int>(x.question.size());
    comp.objects = x.objects;
    switch (kind) {
        case BranchKind::Answering:
            comp.responses = x.answers;
            comp.gold = x.answer_label;
            break;
        case BranchKind::Reasoning: {
            const auto& gold_answer = x.answers[static_cast<std::size_t>(x.answer_label)];
            comp.query.insert(comp.query.end(), gold_answer.begin(), gold_answer.end());
            comp.suffix_len = static_cast<int>(gold_answer.size());
            comp.responses = x.rationales;
            comp.gold = x.rationale_label;
            break;
        }
        case BranchKind::Teacher: {
            const auto& gold_rationale =
                x.rationales[static_cast<std::size_t>(x.rationale_label)];
            comp.query.insert(comp.query.end(), gold_rationale.begin(), gold_rationale.end());
            comp.suffix_len = static_cast<int>(gold_rationale.size());
            comp.responses = x.answers;
            comp.gold = x.answer_label;
            break;
        }
    }
    return comp;
}

/// Parameters of one branch: token embeddings, a visual projector, a
/// bilinear attention form, a two-layer tanh fusion network, and a scalar
/// classifier. Identical shapes for every kind.
struct BranchModel {
    BranchKind kind = BranchKind::Answering;
    ModelConfig config;

    Tensor embedding;           // (vocab, d)
    Tensor visual_proj;         // (feature_dim, d)
    Tensor attention_bilinear;  // (d, d)
    Tensor fusion_w1;           // (d_h, 3d)
    Tensor fusion_b1;           // (d_h)
    Tensor fusion_w2;           // (d_h, d_h)
    Tensor fusion_b2;           // (d_h)
    Tensor classifier;          // (d_h)

    static const std::vector<std::string>& param_names() {
        static const std::vector<std::string> names = {
            "embedding", "visual_proj", "attention_bilinear", "fusion_w1",
            "fusion_b1", "fusion_w2",   "fusion_b2",          "classifier"};
        return names;
    }

    std::vector<Tensor*> params() {
        return {&embedding, &visual_proj, &attention_bilinear, &fusion_w1,
                &fusion_b1, &fusion_w2,   &fusion_b2,          &classifier};
    }
    std::vector<const Tensor*> params() const {
        return {&embedding, &visual_proj, &attention_bilinear, &fusion_w1,
                &fusion_b1, &fusion_w2,   &fusion_b2,          &classifier};
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Tensor* p : params()) n += p->numel();
        return n;
    }

    static BranchModel zeros(BranchKind kind, const ModelConfig& config) {
        config.validate();
        BranchModel m;
        m.kind = kind;
        m.config = config;
        int d = config.embed_dim, dh = config.hidden_dim;
        m.embedding = Tensor({config.vocab_size, d});
        m.visual_proj = Tensor({kFeatureDim, d});
        m.attention_bilinear = Tensor({d, d});
        m.fusion_w1 = Tensor({dh, 3 * d});
        m.fusion_b1 = Tensor({dh});
        m.fusion_w2 = Tensor({dh, dh});
        m.fusion_b2 = Tensor({dh});
        m.classifier = Tensor({dh});
        return m;
    }

    /// Seeded uniform init in [-b, b] with b = 1/(2 sqrt(d)); each branch
    /// kind and parameter draws from its own derived stream. The halved
    /// bound keeps never-updated embedding rows (reserved synonym ids) at a
    /// small norm, so they cannot light up the bilinear attention by token
    /// coincidence alone; trained parameters grow to whatever scale the
    /// task needs.
    static BranchModel init(BranchKind kind, const ModelConfig& config, std::uint64_t seed) {
        BranchModel m = zeros(kind, config);
        double bound = 0.5 / std::sqrt(static_cast<double>(config.embed_dim));
        auto ps = m.params();
        const auto& names = param_names();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            Rng rng(derive_seed(seed, std::string(branch_name(kind)) + "/" + names[i]));
            for (double& x : ps[i]->data()) x = rng.uniform(-bound, bound);
        }
        return m;
    }
};

/// On-tape handles for one branch's parameters.
struct BranchParams {
    Variable embedding, visual_proj, attention_bilinear;
    Variable fusion_w1, fusion_b1, fusion_w2, fusion_b2, classifier;
};

inline BranchParams register_params(Tape& tape, const BranchModel& m, bool requires_grad) {
    BranchParams p;
    p.embedding = tape.leaf(m.embedding, requires_grad);
    p.visual_proj = tape.leaf(m.visual_proj, requires_grad);
    p.attention_bilinear = tape.leaf(m.attention_bilinear, requires_grad);
    p.fusion_w1 = tape.leaf(m.fusion_w1, requires_grad);
    p.fusion_b1 = tape.leaf(m.fusion_b1, requires_grad);
    p.fusion_w2 = tape.leaf(m.fusion_w2, requires_grad);
    p.fusion_b2 = tape.leaf(m.fusion_b2, requires_grad);
    p.classifier = tape.leaf(m.classifier, requires_grad);
    return p;
}

inline std::vector<Variable> param_handles(const BranchParams& p) {
    return {p.embedding, p.visual_proj, p.attention_bilinear, p.fusion_w1,
            p.fusion_b1, p.fusion_w2,   p.fusion_b2,          p.classifier};
}

/// Per-candidate logits, attention maps (query rows x response columns), and
/// fused features. Everything differentiable end to end.
///
/// `attention` is row-stochastic: each query token's distribution over
/// response tokens, the map the fusion consumes. `query_attention` is the
/// probe readout from the same scores, normalized along the query axis: each
/// response token's distribution over query tokens, so the mass landing on
/// answer rows is meaningful. It carries no gradients.
struct ForwardOutput {
    Variable logits;                  // (4)
    std::vector<Variable> attention;  // one (|query| x |response|) map per candidate
    std::vector<Tensor> query_attention;  // same shape, columns sum to 1
    std::vector<Variable> fused;      // one (d_h) feature per candidate
};

namespace detail {

// zero rows except projected-object rows at tagged positions
inline Tensor grounding_matrix(const std::vector<int>& ids,
                               const std::vector<SceneObject>& objects, bool& any) {
    int len = static_cast<int>(ids.size());
    Tensor g({len, kFeatureDim});
    any = false;
    for (int i = 0; i < len; ++i) {
        for (const SceneObject& obj : objects) {
            if (obj.tag == ids[static_cast<std::size_t>(i)]) {
                any = true;
                for (int j = 0; j < kFeatureDim; ++j) g.at(i, j) = obj.feature[static_cast<std::size_t>(j)];
                break;
            }
        }
    }
    return g;
}

inline Variable embed_grounded(Tape& tape, const BranchParams& p, const std::vector<int>& ids,
                               const std::vector<SceneObject>& objects) {
    Variable e = embedding(p.embedding, ids);
    bool any = false;
    Tensor g = grounding_matrix(ids, objects, any);
    if (!any) return e;  // tagless sequences skip the zero add
    Variable grounded = matmul(tape.constant(std::move(g)), p.visual_proj);
    return add(e, grounded);
}

// per-column softmax over the query axis, computed outside the tape
inline Tensor column_softmax(const Tensor& scores) {
    int rows = scores.dim(0), cols = scores.dim(1);
    Tensor out({rows, cols});
    for (int j = 0; j < cols; ++j) {
        double mx = scores.at(0, j);
        for (int i = 1; i < rows; ++i) mx = std::max(mx, scores.at(i, j));
        double sum = 0.0;
        for (int i = 0; i < rows; ++i) {
            double e = std::exp(scores.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (int i = 0; i < rows; ++i) out.at(i, j) /= sum;
    }
    return out;
}

}  // namespace detail

inline ForwardOutput forward(Tape& tape, const BranchParams& p, const QueryComposition& comp) {
    if (comp.responses.empty()) throw ShapeError("forward: no response candidates");

    // shared visual context: mean projected object feature
    int n_obj = static_cast<int>(comp.objects.size());
    Tensor feats({n_obj, kFeatureDim});
    for (int j = 0; j < n_obj; ++j)
        for (int i = 0; i < kFeatureDim; ++i)
            feats.at(j, i) = comp.objects[static_cast<std::size_t>(j)]
                                 .feature[static_cast<std::size_t>(i)];
    Variable visual_ctx = mean_rows(matmul(tape.constant(std::move(feats)), p.visual_proj));

    Variable query_emb = detail::embed_grounded(tape, p, comp.query, comp.objects);
    // bilinear scores of embeddings initialized at 1/sqrt(d) scale sit at
    // O(1/sqrt(d)); the sqrt(d) factor calibrates them to unit order so the
    // row softmax differentiates from the start
    double score_scale = std::sqrt(static_cast<double>(p.embedding.value().dim(1)));
    Variable query_proj = scale(matmul(query_emb, p.attention_bilinear), score_scale);
    Variable query_mean = mean_rows(query_emb);

    ForwardOutput out;
    std::vector<Variable> logits;
    logits.reserve(comp.responses.size());
    for (const auto& response : comp.responses) {
        Variable resp_emb = detail::embed_grounded(tape, p, response, comp.objects);
        Variable scores = matmul(query_proj, transpose(resp_emb));
        Variable attn = softmax_t(scores, 1.0);  // rows are distributions
        out.query_attention.push_back(detail::column_softmax(scores.value()));
        Variable attended = matmul(attn, resp_emb);
        // response-attended query summary: the query mean plus the mean of
        // the attention-selected response content. Candidate information
        // reaches the fusion only through the attention map, never through
        // raw token coincidence.
        Variable attended_mean = mean_rows(attended);
        Variable fusion_in = concat({query_mean, attended_mean, visual_ctx});
        Variable h1 = tanh(add(matmul(p.fusion_w1, fusion_in), p.fusion_b1));
        Variable h = tanh(add(matmul(p.fusion_w2, h1), p.fusion_b2));
        logits.push_back(dot(p.classifier, h));
        out.attention.push_back(attn);
        out.fused.push_back(h);
    }
    out.logits = stack(logits);
    return out;
}

inline ForwardOutput forward(Tape& tape, const BranchModel& m, const QueryComposition& comp,
                             bool requires_grad = false) {
    return forward(tape, register_params(tape, m, requires_grad), comp);
}

/// Index of the maximal logit; ties break to the lowest index.
inline int predict(const Tensor& logits) {
    if (logits.rank() != 1 || logits.dim(0) < 1)
        throw ShapeError("predict: logits must be a non-empty vector");
    int best = 0;
    for (int i = 0; i < logits.dim(0); ++i) {
        double v = logits[static_cast<std::size_t>(i)];
        if (std::isnan(v)) throw NumericError("predict: NaN logit at index " + std::to_string(i));
        if (v > logits[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

inline int predict(const ForwardOutput& out) { return predict(out.logits.value()); }

}  // namespace arc
