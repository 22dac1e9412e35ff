#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "arc/data.hpp"
#include "arc/gradcheck.hpp"
#include "arc/losses.hpp"
#include "arc/model.hpp"

using arc::BranchKind;
using arc::BranchModel;
using arc::Instance;
using arc::ModelConfig;
using arc::Tape;
using arc::Tensor;
using arc::Variable;

namespace {

arc::DatasetSpec tiny_spec() {
    arc::DatasetSpec spec;
    spec.n_train = 8;
    spec.n_val = 4;
    spec.vocab_size = 64;
    spec.seed = 9;
    return spec;
}

ModelConfig tiny_config(int vocab) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.embed_dim = 8;
    cfg.hidden_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("query composition per branch kind") {
    auto [train, val] = arc::generate_dataset(tiny_spec());
    const Instance& x = train[0];
    int l_q = static_cast<int>(x.question.size());
    int l_a = static_cast<int>(x.answers[static_cast<std::size_t>(x.answer_label)].size());
    int l_r = static_cast<int>(x.rationales[static_cast<std::size_t>(x.rationale_label)].size());

    auto answering = arc::compose_query(BranchKind::Answering, x);
    CHECK(static_cast<int>(answering.query.size()) == l_q);
    CHECK(answering.suffix_len == 0);
    CHECK(answering.responses == x.answers);
    CHECK(answering.gold == x.answer_label);

    auto reasoning = arc::compose_query(BranchKind::Reasoning, x);
    CHECK(static_cast<int>(reasoning.query.size()) == l_q + l_a);
    CHECK(reasoning.question_len == l_q);
    CHECK(reasoning.suffix_len == l_a);
    CHECK(reasoning.responses == x.rationales);
    CHECK(std::equal(x.question.begin(), x.question.end(), reasoning.query.begin()));

    auto teacher = arc::compose_query(BranchKind::Teacher, x);
    CHECK(static_cast<int>(teacher.query.size()) == l_q + l_r);
    CHECK(teacher.suffix_len == l_r);
    CHECK(teacher.responses == x.answers);
    CHECK(teacher.gold == x.answer_label);
}

TEST_CASE("architecture equality across kinds") {
    ModelConfig cfg = tiny_config(64);
    BranchModel a = BranchModel::init(BranchKind::Answering, cfg, 5);
    BranchModel r = BranchModel::init(BranchKind::Reasoning, cfg, 5);
    BranchModel c = BranchModel::init(BranchKind::Teacher, cfg, 5);
    CHECK(a.parameter_count() == r.parameter_count());
    CHECK(r.parameter_count() == c.parameter_count());
    auto pa = a.params(), pr = r.params(), pc = c.params();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->shape() == pr[i]->shape());
        CHECK(pr[i]->shape() == pc[i]->shape());
    }
    // parameters are not shared: distinct kinds draw distinct values
    CHECK(a.embedding.data() != r.embedding.data());

    // same seed reproduces the same init
    BranchModel a2 = BranchModel::init(BranchKind::Answering, cfg, 5);
    CHECK(a.embedding.data() == a2.embedding.data());
}

TEST_CASE("zero model scores all candidates equally") {
    auto [train, val] = arc::generate_dataset(tiny_spec());
    BranchModel zero = BranchModel::zeros(BranchKind::Answering, tiny_config(64));
    Tape tape;
    auto out = arc::forward(tape, zero, arc::compose_query(BranchKind::Answering, train[0]));
    const Tensor& logits = out.logits.value();
    for (int i = 1; i < 4; ++i) CHECK(logits[static_cast<std::size_t>(i)] == logits[0]);
    Tensor p = arc::softmax_t(out.logits, 1.0).value();
    for (int i = 0; i < 4; ++i) CHECK(p[static_cast<std::size_t>(i)] == 0.25);
    CHECK(arc::predict(out) == 0);  // tie resolves to the lowest index
}

TEST_CASE("attention rows are probability distributions") {
    auto [train, val] = arc::generate_dataset(tiny_spec());
    BranchModel m = BranchModel::init(BranchKind::Reasoning, tiny_config(64), 13);
    Tape tape;
    auto comp = arc::compose_query(BranchKind::Reasoning, train[1]);
    auto out = arc::forward(tape, m, comp);
    REQUIRE(out.attention.size() == 4);
    for (const Variable& attn : out.attention) {
        const Tensor& w = attn.value();
        REQUIRE(w.rank() == 2);
        CHECK(w.dim(0) == static_cast<int>(comp.query.size()));
        for (int i = 0; i < w.dim(0); ++i) {
            double row = 0.0;
            for (int j = 0; j < w.dim(1); ++j) {
                CHECK(w.at(i, j) >= 0.0);
                row += w.at(i, j);
            }
            CHECK_THAT(row, Catch::Matchers::WithinAbs(1.0, 1e-9));
        }
    }
}

TEST_CASE("candidate permutation equivariance is exact") {
    auto [train, val] = arc::generate_dataset(tiny_spec());
    BranchModel m = BranchModel::init(BranchKind::Answering, tiny_config(64), 21);
    auto comp = arc::compose_query(BranchKind::Answering, train[2]);

    Tape t1;
    Tensor base = arc::forward(t1, m, comp).logits.value();

    std::vector<int> perm = {2, 0, 3, 1};
    auto permuted = comp;
    for (int i = 0; i < 4; ++i)
        permuted.responses[static_cast<std::size_t>(i)] =
            comp.responses[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    Tape t2;
    Tensor shuffled = arc::forward(t2, m, permuted).logits.value();
    for (int i = 0; i < 4; ++i)
        CHECK(shuffled[static_cast<std::size_t>(i)] ==
              base[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
}

TEST_CASE("predict tie-breaking and shift invariance") {
    CHECK(arc::predict(Tensor::vector({0.1, 0.9, 0.2, 0.3})) == 1);
    CHECK(arc::predict(Tensor::vector({0.5, 0.5, 0.1, 0.1})) == 0);
    Tensor shifted = Tensor::vector({0.1 + 7.0, 0.9 + 7.0, 0.2 + 7.0, 0.3 + 7.0});
    CHECK(arc::predict(shifted) == 1);
    CHECK_THROWS_AS(arc::predict(Tensor::vector({0.1, std::nan(""), 0.0, 0.0})),
                    arc::NumericError);
}

TEST_CASE("branch forward gradients match central differences") {
    auto [train, val] = arc::generate_dataset(tiny_spec());
    BranchModel m = BranchModel::init(BranchKind::Reasoning, tiny_config(64), 33);
    auto comp = arc::compose_query(BranchKind::Reasoning, train[3]);

    std::vector<Tensor> point;
    for (const Tensor* p : m.params()) point.push_back(*p);

    auto f = [&](Tape& tape, const std::vector<Variable>& v) {
        arc::BranchParams p{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
        auto out = arc::forward(tape, p, comp);
        return arc::cross_entropy_loss(out.logits, comp.gold);
    };
    // embeddings are sampled per-row (64 coords each); everything else fully
    auto rep = arc::grad_check(f, point, 1e-3, 1e-4, /*max_coords_per_tensor=*/64, 7);
    INFO("max rel err " << rep.max_rel_err << " at " << rep.worst_coord << " over "
                        << rep.coords_checked << " coords");
    CHECK(rep.pass);
}
