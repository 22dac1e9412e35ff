#pragma once

// Shared helpers for the unit and acceptance suites.

#include <cmath>
#include <string>
#include <vector>

#include "arc/autodiff.hpp"
#include "arc/gradcheck.hpp"
#include "arc/losses.hpp"
#include "arc/model.hpp"
#include "arc/tensor.hpp"
#include "arc/trainer.hpp"

namespace arc_test {

// Independent single-branch trainer: plain cross-entropy over one branch,
// same shuffle stream and optimizer settings as the joint loop. The oracle
// for the separate-training baseline comparison.
inline arc::BranchModel train_single_branch(arc::BranchKind kind,
                                            const std::vector<arc::Instance>& train_split,
                                            const arc::ModelConfig& model_cfg,
                                            const arc::TrainConfig& cfg) {
    arc::BranchModel model = arc::BranchModel::init(kind, model_cfg, cfg.seed);
    arc::AdamW opt(model.params(), cfg);
    arc::Rng shuffle_rng(arc::derive_seed(cfg.seed, "stage2_shuffle"));
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        auto order = arc::detail::shuffled_indices(train_split.size(), shuffle_rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            arc::Tape tape;
            arc::BranchParams params = arc::register_params(tape, model, true);
            arc::Variable batch_loss;
            for (std::size_t k = start; k < end; ++k) {
                const arc::Instance& inst = train_split[order[k]];
                auto comp = arc::compose_query(kind, inst);
                auto out = arc::forward(tape, params, comp);
                arc::Variable ce = arc::cross_entropy_loss(out.logits, comp.gold);
                batch_loss = k == start ? ce : arc::add(batch_loss, ce);
            }
            batch_loss = arc::scale(batch_loss, 1.0 / static_cast<double>(end - start));
            tape.backward(batch_loss);
            std::vector<const arc::Tensor*> grads;
            for (const arc::Variable& v : arc::param_handles(params)) grads.push_back(&v.grad());
            opt.step(grads);
        }
    }
    return model;
}

inline bool models_bitwise_equal(const arc::BranchModel& a, const arc::BranchModel& b) {
    auto pa = a.params();
    auto pb = b.params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i]->data() != pb[i]->data()) return false;
    return true;
}

struct PrimitiveCheck {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t coords = 0;
};

// Runs grad_check over every differentiable primitive at `points` random
// inputs each and reports the worst relative error per primitive.
inline std::vector<PrimitiveCheck> primitive_gradchecks(int points, double step = 1e-3,
                                                        std::uint64_t seed = 20240801) {
    using arc::Tape;
    using arc::Tensor;
    using arc::Variable;
    arc::Rng rng(seed);
    auto rand_tensor = [&](std::vector<int> shape, double scale = 1.5) {
        Tensor t(std::move(shape));
        for (double& x : t.data()) x = rng.uniform(-scale, scale);
        return t;
    };

    std::vector<PrimitiveCheck> out;
    auto run = [&](const std::string& name, auto f, std::vector<Tensor> point) {
        auto rep = arc::grad_check(f, point, step, 1.0);  // collect err; caller applies tol
        if (out.empty() || out.back().name != name) out.push_back({name, 0.0, 0});
        out.back().max_rel_err = std::max(out.back().max_rel_err, rep.max_rel_err);
        out.back().coords += rep.coords_checked;
    };

    for (int p = 0; p < points; ++p) {
        run(
            "add",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::add(v[0], v[1])));
            },
            {rand_tensor({3, 4}), rand_tensor({3, 4})});
        run(
            "add_broadcast",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::add(v[0], v[1])));
            },
            {rand_tensor({3, 4}), rand_tensor({4})});
        run(
            "sub",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::sub(v[0], v[1])));
            },
            {rand_tensor({5}), rand_tensor({5})});
        run(
            "mul",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::mul(v[0], v[1])));
            },
            {rand_tensor({2, 3}), rand_tensor({2, 3})});
        run(
            "scale",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::scale(v[0], -1.7)));
            },
            {rand_tensor({6})});
        run(
            "tanh",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(v[0]));
            },
            {rand_tensor({7})});
        run(
            "relu",
            [](Tape& t, const std::vector<Variable>& v) {
                // offset keeps coordinates away from the kink at 0
                return arc::reduce_sum(arc::relu(arc::add(v[0], v[1])));
            },
            {rand_tensor({8}), rand_tensor({8})});
        run(
            "concat",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::concat({v[0], v[1]}, 0)));
            },
            {rand_tensor({3}), rand_tensor({4})});
        run(
            "reduce_sum",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::mul(v[0], v[0]));
            },
            {rand_tensor({3, 2})});
        run(
            "reduce_mean",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_mean(arc::mul(v[0], v[0]));
            },
            {rand_tensor({9})});
        run(
            "mean_rows",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::mean_rows(v[0])));
            },
            {rand_tensor({4, 3})});
        run(
            "embedding",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::embedding(v[0], {0, 2, 2, 4})));
            },
            {rand_tensor({5, 3})});
        run(
            "matmul",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::matmul(v[0], v[1])));
            },
            {rand_tensor({3, 4}), rand_tensor({4, 2})});
        run(
            "matvec",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::matmul(v[0], v[1])));
            },
            {rand_tensor({3, 4}), rand_tensor({4})});
        run(
            "transpose",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(arc::matmul(arc::transpose(v[0]), v[1])));
            },
            {rand_tensor({3, 2}), rand_tensor({3})});
        run(
            "dot",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::dot(v[0], v[1]);
            },
            {rand_tensor({6}), rand_tensor({6})});
        run(
            "pick",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::tanh(arc::pick(v[0], 2));
            },
            {rand_tensor({5})});
        run(
            "stack",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::tanh(
                    arc::stack({arc::pick(v[0], 0), arc::pick(v[0], 3), arc::dot(v[0], v[0])})));
            },
            {rand_tensor({4})});
        run(
            "softmax_t",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::mul(arc::softmax_t(v[0], 2.0), v[1]));
            },
            {rand_tensor({5}), rand_tensor({5})});
        run(
            "softmax_rows",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::mul(arc::softmax_t(v[0], 0.5), v[1]));
            },
            {rand_tensor({3, 4}), rand_tensor({3, 4})});
        run(
            "log_softmax",
            [](Tape& t, const std::vector<Variable>& v) {
                return arc::reduce_sum(arc::mul(arc::log_softmax(v[0]), v[1]));
            },
            {rand_tensor({6}), rand_tensor({6})});
    }
    return out;
}

}  // namespace arc_test
