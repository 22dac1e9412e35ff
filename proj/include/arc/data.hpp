#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "arc/common.hpp"
#include "arc/tensor.hpp"

namespace arc {

constexpr int kFeatureDim = 16;
constexpr int kNumObjects = 3;     // scene objects per instance
constexpr int kNumRelations = 4;   // question relation types
constexpr int kNumCandidates = 4;  // multiple-choice options
constexpr double kFeatureNoise = 0.1;

struct SceneObject {
    int tag = 0;
    std::vector<double> feature;  // kFeatureDim entries

    bool operator==(const SceneObject&) const = default;
};

/// One multiple-choice item: tagged object features, a question, four answer
/// candidates, four rationale candidates, and the two gold labels.
struct Instance {
    std::vector<SceneObject> objects;
    std::vector<int> question;
    std::vector<std::vector<int>> answers;     // kNumCandidates entries
    std::vector<std::vector<int>> rationales;  // kNumCandidates entries
    int answer_label = 0;
    int rationale_label = 0;

    bool operator==(const Instance&) const = default;

    void validate(int vocab_size, const struct TaskLayout* layout = nullptr) const;
};

/// Bijective token-id substitution, identity outside its domain.
class SynonymMap {
  public:
    SynonymMap() = default;

    explicit SynonymMap(const std::vector<std::pair<int, int>>& pairs) {
        for (auto [src, dst] : pairs) {
            if (fwd_.count(src)) throw ParamError("synonym map: duplicate source id " +
                                                  std::to_string(src));
            if (rev_.count(dst)) throw ParamError("synonym map: duplicate target id " +
                                                  std::to_string(dst));
            fwd_[src] = dst;
            rev_[dst] = src;
        }
        for (auto [src, dst] : pairs) {
            if (fwd_.count(dst) || rev_.count(src))
                throw ParamError("synonym map: sources and targets must be disjoint id sets");
        }
    }

    int apply(int token) const {
        auto it = fwd_.find(token);
        return it == fwd_.end() ? token : it->second;
    }

    int invert(int token) const {
        auto it = rev_.find(token);
        return it == rev_.end() ? token : it->second;
    }

    SynonymMap inverse() const {
        SynonymMap m;
        m.fwd_ = rev_;
        m.rev_ = fwd_;
        return m;
    }

    bool empty() const { return fwd_.empty(); }
    std::size_t size() const { return fwd_.size(); }
    const std::unordered_map<int, int>& mapping() const { return fwd_; }

  private:
    std::unordered_map<int, int> fwd_;
    std::unordered_map<int, int> rev_;
};

/// Everything the generator needs: corpus sizes, vocabulary size, latent
/// concept count, shortcut strength, overlap-token count, synonym pairs,
/// seed, and sequence lengths.
struct DatasetSpec {
    int n_train = 2000;
    int n_val = 500;
    int vocab_size = 96;
    int n_concepts = 6;
    double shortcut_strength = 0.5;  // probability of injecting overlap tokens
    int overlap_tokens = 2;          // k tokens copied from gold answer to gold rationale
    std::vector<std::pair<int, int>> synonym_pairs;
    std::uint64_t seed = 1;
    int l_q = 5;
    int l_a = 3;
    int l_r = 5;

    void validate() const;

    bool operator==(const DatasetSpec&) const = default;
};

/// Derived vocabulary layout and relation tables. Token blocks, in order:
/// pad | relations | answer concepts | rationale concepts | tags | fillers |
/// reserved synonym targets. Reserved ids never occur in generated text.
struct TaskLayout {
    int vocab_size = 0;
    int n_concepts = 0;
    int relation_base = 1;
    int answer_concept_base = 0;
    int rationale_concept_base = 0;
    int tag_base = 0;
    int filler_base = 0;
    int content_end = 0;  // first reserved id

    // answer_table[r][z] / rationale_table[r][z]: per-relation permutations
    std::vector<std::vector<int>> answer_table;
    std::vector<std::vector<int>> rationale_table;
    // concept_basis[z]: unit-norm direction of concept z in feature space
    std::vector<std::vector<double>> concept_basis;

    static constexpr int pad_id = 0;
    int relation_id(int r) const { return relation_base + r; }
    int answer_concept_id(int c) const { return answer_concept_base + c; }
    int rationale_concept_id(int c) const { return rationale_concept_base + c; }
    int tag_id(int j) const { return tag_base + j; }
    int filler_count() const { return content_end - filler_base; }

    bool is_relation(int t) const { return t >= relation_base && t < answer_concept_base; }
    bool is_answer_concept(int t) const {
        return t >= answer_concept_base && t < rationale_concept_base;
    }
    bool is_rationale_concept(int t) const { return t >= rationale_concept_base && t < tag_base; }
    bool is_tag(int t) const { return t >= tag_base && t < filler_base; }
};

inline TaskLayout layout_for(const DatasetSpec& spec) {
    TaskLayout lay;
    lay.vocab_size = spec.vocab_size;
    lay.n_concepts = spec.n_concepts;
    lay.relation_base = 1;
    lay.answer_concept_base = lay.relation_base + kNumRelations;
    lay.rationale_concept_base = lay.answer_concept_base + spec.n_concepts;
    lay.tag_base = lay.rationale_concept_base + spec.n_concepts;
    lay.filler_base = lay.tag_base + kNumObjects;
    lay.content_end = spec.vocab_size - static_cast<int>(spec.synonym_pairs.size());

    // per-relation permutations: distinct concepts always map to distinct
    // answer (and rationale) concepts, which keeps labels unambiguous
    Rng table_rng(derive_seed(spec.seed, "relation_tables"));
    auto permutation = [&](int n) {
        std::vector<int> p(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
        for (int i = n - 1; i > 0; --i)
            std::swap(p[static_cast<std::size_t>(i)],
                      p[static_cast<std::size_t>(table_rng.next_int(0, i + 1))]);
        return p;
    };
    for (int r = 0; r < kNumRelations; ++r) {
        lay.answer_table.push_back(permutation(spec.n_concepts));
        lay.rationale_table.push_back(permutation(spec.n_concepts));
    }

    // concept directions: rows of a random rotation (Gram-Schmidt on a
    // seeded Gaussian matrix), so distinct concepts are exactly orthogonal
    Rng basis_rng(derive_seed(spec.seed, "concept_basis"));
    for (int c = 0; c < spec.n_concepts; ++c) {
        std::vector<double> v(kFeatureDim);
        while (true) {
            for (double& x : v) x = basis_rng.next_gauss();
            for (const auto& prev : lay.concept_basis) {
                double d = 0.0;
                for (int i = 0; i < kFeatureDim; ++i) d += v[static_cast<std::size_t>(i)] *
                                                           prev[static_cast<std::size_t>(i)];
                for (int i = 0; i < kFeatureDim; ++i)
                    v[static_cast<std::size_t>(i)] -= d * prev[static_cast<std::size_t>(i)];
            }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            if (norm > 1e-6) {
                norm = std::sqrt(norm);
                for (double& x : v) x /= norm;
                break;
            }
        }
        lay.concept_basis.push_back(std::move(v));
    }
    return lay;
}

inline void Instance::validate(int vocab_size, const TaskLayout* layout) const {
    if (static_cast<int>(answers.size()) != kNumCandidates ||
        static_cast<int>(rationales.size()) != kNumCandidates)
        throw ParamError("instance must carry exactly 4 answers and 4 rationales");
    if (answer_label < 0 || answer_label >= kNumCandidates || rationale_label < 0 ||
        rationale_label >= kNumCandidates)
        throw ParamError("instance labels must lie in 0..3");
    if (objects.empty()) throw ParamError("instance must carry at least one object");
    std::set<int> object_tags;
    for (const SceneObject& o : objects) {
        if (static_cast<int>(o.feature.size()) != kFeatureDim)
            throw ParamError("object feature must have " + std::to_string(kFeatureDim) + " dims");
        object_tags.insert(o.tag);
    }
    auto check_seq = [&](const std::vector<int>& seq, const char* what) {
        if (seq.empty()) throw ParamError(std::string(what) + " must be non-empty");
        for (int t : seq) {
            if (t < 0 || t >= vocab_size)
                throw ParamError(std::string(what) + " token " + std::to_string(t) +
                                 " outside vocabulary of size " + std::to_string(vocab_size));
            if (layout && layout->is_tag(t) && !object_tags.count(t))
                throw ParamError(std::string(what) + " references tag " + std::to_string(t) +
                                 " with no matching object");
        }
    };
    check_seq(question, "question");
    for (const auto& a : answers) check_seq(a, "answer");
    for (const auto& r : rationales) check_seq(r, "rationale");
}

inline void DatasetSpec::validate() const {
    if (n_train <= 0) throw ConfigError("n_train must be positive");
    if (n_val <= 0) throw ConfigError("n_val must be positive");
    if (shortcut_strength < 0.0 || shortcut_strength > 1.0)
        throw ConfigError("shortcut_strength must lie in [0,1], got " +
                          std::to_string(shortcut_strength));
    if (n_concepts < kNumCandidates)
        throw ConfigError("n_concepts must be at least 4 so distractors stay distinct");
    if (n_concepts > kFeatureDim)
        throw ConfigError("n_concepts cannot exceed the feature dimension " +
                          std::to_string(kFeatureDim));
    if (overlap_tokens < 0) throw ConfigError("overlap_tokens must be non-negative");
    if (l_q < 2) throw ConfigError("l_q must be at least 2 (relation and tag tokens)");
    if (l_a < 1) throw ConfigError("l_a must be at least 1");
    if (overlap_tokens > l_a - 1)
        throw ConfigError(
            "overlap_tokens cannot exceed l_a - 1 (drawn from the answer's filler tokens)");
    if (l_r < 2 + overlap_tokens)
        throw ConfigError("l_r must be at least 2 + overlap_tokens to keep the concept and tag");

    TaskLayout lay = layout_for(*this);
    if (lay.content_end <= lay.filler_base ||
        lay.filler_count() < std::max({l_q, l_a, l_r}) + overlap_tokens + 4)
        throw ConfigError("vocab_size too small for " + std::to_string(overlap_tokens) +
                          " disjoint overlap tokens plus fillers and reserved synonym ids");

    std::set<int> sources, targets;
    for (auto [src, dst] : synonym_pairs) {
        if (!sources.insert(src).second)
            throw ConfigError("synonym_pairs: duplicate source " + std::to_string(src));
        if (!targets.insert(dst).second)
            throw ConfigError("synonym_pairs: duplicate target " + std::to_string(dst));
        if (dst < lay.content_end || dst >= vocab_size)
            throw ConfigError("synonym_pairs: target " + std::to_string(dst) +
                              " must lie in the reserved block [" +
                              std::to_string(lay.content_end) + ", " +
                              std::to_string(vocab_size) + ")");
        if (src <= TaskLayout::pad_id || src >= lay.content_end || lay.is_tag(src))
            throw ConfigError("synonym_pairs: source " + std::to_string(src) +
                              " must be a relation, concept, or filler token");
    }
    for (int s : sources)
        if (targets.count(s))
            throw ConfigError("synonym_pairs: sources and targets must be disjoint");
}

/// Reserves round(fraction * vocab_size) synonym pairs: sources drawn from
/// the filler block (the replaceable surface words; relation, concept, and
/// tag tokens carry the semantics a meaning-preserving substitution leaves
/// intact), targets taken from the top of the vocabulary. The returned spec
/// carries the pairs; generated text never uses the targets.
inline DatasetSpec with_synonym_pairs(DatasetSpec spec, double fraction) {
    if (fraction < 0.0 || fraction >= 0.9)
        throw ConfigError("synonym fraction must lie in [0, 0.9)");
    int n = static_cast<int>(std::lround(fraction * spec.vocab_size));
    spec.synonym_pairs.clear();
    if (n == 0) return spec;
    DatasetSpec probe = spec;
    probe.synonym_pairs.assign(static_cast<std::size_t>(n), {0, 0});  // sizes the reserved block
    TaskLayout lay = layout_for(probe);
    std::vector<int> mappable;
    for (int t = lay.filler_base; t < lay.content_end; ++t) mappable.push_back(t);
    if (n > static_cast<int>(mappable.size()))
        throw ConfigError("vocab_size too small to map a fraction of " + std::to_string(fraction));
    Rng rng(derive_seed(spec.seed, "synonym_pairs"));
    for (int i = static_cast<int>(mappable.size()) - 1; i > 0; --i)
        std::swap(mappable[static_cast<std::size_t>(i)],
                  mappable[static_cast<std::size_t>(rng.next_int(0, i + 1))]);
    for (int i = 0; i < n; ++i)
        spec.synonym_pairs.emplace_back(mappable[static_cast<std::size_t>(i)],
                                        lay.content_end + i);
    std::sort(spec.synonym_pairs.begin(), spec.synonym_pairs.end());
    spec.validate();
    return spec;
}

namespace detail {

inline std::vector<int> draw_distinct_fillers(const TaskLayout& lay, int count, Rng& rng,
                                              const std::set<int>& exclude) {
    std::vector<int> out;
    std::set<int> used = exclude;
    while (static_cast<int>(out.size()) < count) {
        int t = lay.filler_base + rng.next_int(0, lay.filler_count());
        if (used.insert(t).second) out.push_back(t);
    }
    return out;
}

inline std::vector<int> distinct_other_concepts(int z, int n_concepts, Rng& rng) {
    std::vector<int> pool;
    for (int c = 0; c < n_concepts; ++c)
        if (c != z) pool.push_back(c);
    for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i)
        std::swap(pool[static_cast<std::size_t>(i)],
                  pool[static_cast<std::size_t>(rng.next_int(0, i + 1))]);
    pool.resize(kNumCandidates - 1);
    return pool;
}

inline Instance generate_instance(const DatasetSpec& spec, const TaskLayout& lay,
                                  std::uint64_t index) {
    Rng rng(derive_seed(spec.seed, 0x1000000ULL + index));
    int z = rng.next_int(0, spec.n_concepts);
    int r = rng.next_int(0, kNumRelations);
    int queried = rng.next_int(0, kNumObjects);

    Instance inst;
    for (int j = 0; j < kNumObjects; ++j) {
        SceneObject obj;
        obj.tag = lay.tag_id(j);
        obj.feature.resize(kFeatureDim);
        for (int i = 0; i < kFeatureDim; ++i)
            obj.feature[static_cast<std::size_t>(i)] =
                lay.concept_basis[static_cast<std::size_t>(z)][static_cast<std::size_t>(i)] +
                kFeatureNoise * rng.next_gauss();
        inst.objects.push_back(std::move(obj));
    }

    inst.question = {lay.relation_id(r), lay.tag_id(queried)};
    for (int t : draw_distinct_fillers(lay, spec.l_q - 2, rng, {})) inst.question.push_back(t);

    std::vector<int> gold_answer_fillers = draw_distinct_fillers(lay, spec.l_a - 1, rng, {});

    // The planted shortcut: k of the gold answer's filler tokens recur in the
    // gold rationale and in no distractor rationale, so lexical matching
    // solves QA->R without the question. The same tokens are copied into
    // every answer candidate, which keeps the overlap useless for Q->A and
    // for the teacher's QR->A: those two stay decidable only semantically.
    bool inject = rng.next_double() < spec.shortcut_strength && spec.overlap_tokens > 0;
    std::set<int> injected;
    std::vector<int> injected_order;
    if (inject) {
        std::vector<int> positions(gold_answer_fillers.size());
        for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
        for (int i = static_cast<int>(positions.size()) - 1; i > 0; --i)
            std::swap(positions[static_cast<std::size_t>(i)],
                      positions[static_cast<std::size_t>(rng.next_int(0, i + 1))]);
        for (int i = 0; i < spec.overlap_tokens; ++i) {
            int tok = gold_answer_fillers[static_cast<std::size_t>(
                positions[static_cast<std::size_t>(i)])];
            injected.insert(tok);
            injected_order.push_back(tok);
        }
    }

    auto make_answer = [&](int concept_idx, bool gold) {
        std::vector<int> a = {lay.answer_concept_id(
            lay.answer_table[static_cast<std::size_t>(r)][static_cast<std::size_t>(concept_idx)])};
        if (gold) {
            for (int t : gold_answer_fillers) a.push_back(t);
        } else if (inject) {
            for (int t : injected_order) a.push_back(t);
            for (int t : draw_distinct_fillers(lay, spec.l_a - 1 - spec.overlap_tokens, rng,
                                               injected))
                a.push_back(t);
        } else {
            for (int t : draw_distinct_fillers(lay, spec.l_a - 1, rng, {})) a.push_back(t);
        }
        return a;
    };
    std::vector<int> gold_answer = make_answer(z, true);

    auto make_rationale = [&](int concept_idx, bool gold) {
        std::vector<int> rat = {
            lay.rationale_concept_id(
                lay.rationale_table[static_cast<std::size_t>(r)][static_cast<std::size_t>(concept_idx)]),
            lay.tag_id(queried)};
        int fill = spec.l_r - 2 - (gold && inject ? spec.overlap_tokens : 0);
        for (int t : draw_distinct_fillers(lay, fill, rng, injected)) rat.push_back(t);
        if (gold && inject)
            for (int t : injected_order) rat.push_back(t);
        return rat;
    };

    std::vector<int> gold_rationale = make_rationale(z, true);
    std::vector<std::vector<int>> answer_pool = {gold_answer};
    for (int c : distinct_other_concepts(z, spec.n_concepts, rng))
        answer_pool.push_back(make_answer(c, false));
    std::vector<std::vector<int>> rationale_pool = {gold_rationale};
    for (int c : distinct_other_concepts(z, spec.n_concepts, rng))
        rationale_pool.push_back(make_rationale(c, false));

    // uniform placement of the gold candidates
    auto shuffle_into = [&](std::vector<std::vector<int>>& pool, int& label) {
        std::vector<int> order = {0, 1, 2, 3};
        for (int i = kNumCandidates - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(rng.next_int(0, i + 1))]);
        std::vector<std::vector<int>> shuffled(kNumCandidates);
        for (int i = 0; i < kNumCandidates; ++i) {
            shuffled[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
                std::move(pool[static_cast<std::size_t>(i)]);
        }
        label = order[0];
        pool = std::move(shuffled);
    };
    shuffle_into(answer_pool, inst.answer_label);
    shuffle_into(rationale_pool, inst.rationale_label);
    inst.answers = std::move(answer_pool);
    inst.rationales = std::move(rationale_pool);
    return inst;
}

}  // namespace detail

/// Deterministic corpus generation; a pure function of the spec. Instances
/// are independently seeded by (seed, index), so the split point does not
/// change earlier items.
inline std::pair<std::vector<Instance>, std::vector<Instance>> generate_dataset(
    const DatasetSpec& spec) {
    spec.validate();
    TaskLayout lay = layout_for(spec);
    std::vector<Instance> train, val;
    train.reserve(static_cast<std::size_t>(spec.n_train));
    val.reserve(static_cast<std::size_t>(spec.n_val));
    for (int i = 0; i < spec.n_train; ++i)
        train.push_back(detail::generate_instance(spec, lay, static_cast<std::uint64_t>(i)));
    for (int i = 0; i < spec.n_val; ++i)
        val.push_back(detail::generate_instance(
            spec, lay, static_cast<std::uint64_t>(spec.n_train + i)));
    return {std::move(train), std::move(val)};
}

/// Token substitution via the synonym map; labels, object features, and tags
/// are untouched.
inline Instance paraphrase(const Instance& x, const SynonymMap& m) {
    Instance out = x;
    auto map_seq = [&](std::vector<int>& seq) {
        for (int& t : seq) t = m.apply(t);
    };
    map_seq(out.question);
    for (auto& a : out.answers) map_seq(a);
    for (auto& r : out.rationales) map_seq(r);
    return out;
}

/// Replaces the question with a single neutral padding token (the
/// answer-only probe input). Idempotent.
inline Instance strip_question(const Instance& x) {
    Instance out = x;
    out.question = {TaskLayout::pad_id};
    return out;
}

// ---------------------------------------------------------------------------
// line-record serialization
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void append_int_seq(std::string& out, const std::vector<int>& seq) {
    out += '[';
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(seq[i]);
    }
    out += ']';
}

}  // namespace detail

/// One instance as a single JSON line; doubles carry 17 significant digits
/// so the round-trip is value-exact.
inline std::string instance_to_line(const Instance& inst) {
    std::string out = "{\"objects\":[";
    for (std::size_t j = 0; j < inst.objects.size(); ++j) {
        if (j) out += ',';
        out += "{\"tag\":" + std::to_string(inst.objects[j].tag) + ",\"feat\":[";
        for (std::size_t i = 0; i < inst.objects[j].feature.size(); ++i) {
            if (i) out += ',';
            out += detail::format_double(inst.objects[j].feature[i]);
        }
        out += "]}";
    }
    out += "],\"q\":";
    detail::append_int_seq(out, inst.question);
    out += ",\"a\":[";
    for (std::size_t i = 0; i < inst.answers.size(); ++i) {
        if (i) out += ',';
        detail::append_int_seq(out, inst.answers[i]);
    }
    out += "],\"r\":[";
    for (std::size_t i = 0; i < inst.rationales.size(); ++i) {
        if (i) out += ',';
        detail::append_int_seq(out, inst.rationales[i]);
    }
    out += "],\"ya\":" + std::to_string(inst.answer_label) +
           ",\"yr\":" + std::to_string(inst.rationale_label) + "}";
    return out;
}

inline nlohmann::json spec_to_json(const DatasetSpec& spec) {
    nlohmann::json pairs = nlohmann::json::array();
    for (auto [s, t] : spec.synonym_pairs) pairs.push_back({s, t});
    return {{"n_train", spec.n_train},
            {"n_val", spec.n_val},
            {"vocab_size", spec.vocab_size},
            {"n_concepts", spec.n_concepts},
            {"shortcut_strength", spec.shortcut_strength},
            {"overlap_tokens", spec.overlap_tokens},
            {"synonym_pairs", pairs},
            {"seed", spec.seed},
            {"l_q", spec.l_q},
            {"l_a", spec.l_a},
            {"l_r", spec.l_r}};
}

inline DatasetSpec spec_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "n_train",        "n_val", "vocab_size",    "n_concepts", "shortcut_strength",
        "overlap_tokens", "seed",  "synonym_pairs", "l_q",        "l_a",
        "l_r"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("unknown dataset key \"" + it.key() + "\"");
    DatasetSpec spec;
    spec.n_train = j.value("n_train", spec.n_train);
    spec.n_val = j.value("n_val", spec.n_val);
    spec.vocab_size = j.value("vocab_size", spec.vocab_size);
    spec.n_concepts = j.value("n_concepts", spec.n_concepts);
    spec.shortcut_strength = j.value("shortcut_strength", spec.shortcut_strength);
    spec.overlap_tokens = j.value("overlap_tokens", spec.overlap_tokens);
    spec.seed = j.value("seed", spec.seed);
    spec.l_q = j.value("l_q", spec.l_q);
    spec.l_a = j.value("l_a", spec.l_a);
    spec.l_r = j.value("l_r", spec.l_r);
    if (j.contains("synonym_pairs"))
        for (const auto& p : j.at("synonym_pairs"))
            spec.synonym_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    return spec;
}

inline void write_dataset(const std::string& path, const DatasetSpec& spec,
                          const std::vector<Instance>& instances) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    nlohmann::ordered_json header;
    header["spec"] = spec_to_json(spec);
    out << header.dump() << '\n';
    for (const Instance& inst : instances) out << instance_to_line(inst) << '\n';
    if (!out) throw IoError("failed while writing " + path);
}

inline Instance instance_from_json(const nlohmann::json& j, int vocab_size,
                                   const TaskLayout* layout = nullptr) {
    Instance inst;
    for (const auto& o : j.at("objects")) {
        SceneObject obj;
        obj.tag = o.at("tag").get<int>();
        obj.feature = o.at("feat").get<std::vector<double>>();
        inst.objects.push_back(std::move(obj));
    }
    inst.question = j.at("q").get<std::vector<int>>();
    inst.answers = j.at("a").get<std::vector<std::vector<int>>>();
    inst.rationales = j.at("r").get<std::vector<std::vector<int>>>();
    inst.answer_label = j.at("ya").get<int>();
    inst.rationale_label = j.at("yr").get<int>();
    inst.validate(vocab_size, layout);
    return inst;
}

/// Streaming reader: one line parsed at a time, the callback consumes each
/// instance. Returns the header spec.
inline DatasetSpec read_dataset(const std::string& path,
                                const std::function<void(Instance&&)>& sink) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": line 1: missing header");
    DatasetSpec spec;
    try {
        nlohmann::json header = nlohmann::json::parse(line);
        spec = spec_from_json(header.at("spec"));
        spec.validate();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": line 1: " + e.what());
    }
    TaskLayout lay = layout_for(spec);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            Instance inst = instance_from_json(nlohmann::json::parse(line), spec.vocab_size, &lay);
            sink(std::move(inst));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ": line " + std::to_string(line_no) + ": " + e.what());
        } catch (const ParamError& e) {
            throw ParseError(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return spec;
}

inline DatasetSpec read_dataset(const std::string& path, std::vector<Instance>& out) {
    out.clear();
    return read_dataset(path, [&](Instance&& inst) { out.push_back(std::move(inst)); });
}

// distinct-token overlap between the gold answer and each rationale,
// reported for the gold rationale and averaged over distractors
struct OverlapStats {
    double mean_gold_overlap = 0.0;
    double mean_distractor_overlap = 0.0;
};

inline OverlapStats overlap_stats(const std::vector<Instance>& instances) {
    OverlapStats stats;
    if (instances.empty()) return stats;
    double gold = 0.0, other = 0.0;
    for (const Instance& inst : instances) {
        std::set<int> answer_tokens(
            inst.answers[static_cast<std::size_t>(inst.answer_label)].begin(),
            inst.answers[static_cast<std::size_t>(inst.answer_label)].end());
        for (int i = 0; i < kNumCandidates; ++i) {
            std::set<int> shared;
            for (int t : inst.rationales[static_cast<std::size_t>(i)])
                if (answer_tokens.count(t)) shared.insert(t);
            if (i == inst.rationale_label)
                gold += static_cast<double>(shared.size());
            else
                other += static_cast<double>(shared.size()) / (kNumCandidates - 1);
        }
    }
    stats.mean_gold_overlap = gold / static_cast<double>(instances.size());
    stats.mean_distractor_overlap = other / static_cast<double>(instances.size());
    return stats;
}

}  // namespace arc
