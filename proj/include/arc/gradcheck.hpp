#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "arc/autodiff.hpp"
#include "arc/common.hpp"
#include "arc/tensor.hpp"

namespace arc {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
    bool pass = false;
    std::string worst_coord;
};

/// Compares the analytic gradient of a scalar function against central
/// differences (f(x+he) - f(x-he)) / 2h, coordinate by coordinate.
///
/// `f` is called as f(tape, vars) -> scalar Variable, where vars mirror
/// `point`. Error per coordinate is |analytic - numeric| relative to
/// max(1, |analytic|, |numeric|), so near-zero gradients are judged on an
/// absolute scale. `max_coords_per_tensor` == 0 checks every coordinate;
/// otherwise a seeded subset of that size is drawn per tensor.
template <typename F>
GradCheckReport grad_check(F&& f, const std::vector<Tensor>& point, double step, double tol,
                           std::size_t max_coords_per_tensor = 0, std::uint64_t coord_seed = 0) {
    if (step < 1e-5 || step > 1e-2)
        throw ParamError("grad_check: step " + std::to_string(step) + " outside [1e-5, 1e-2]");
    if (tol <= 0.0) throw ParamError("grad_check: tolerance must be positive");

    auto eval = [&](const std::vector<Tensor>& at) {
        Tape tape;
        std::vector<Variable> vars;
        vars.reserve(at.size());
        for (const Tensor& t : at) vars.push_back(tape.leaf(t, false));
        Variable out = f(tape, vars);
        return out.value().item();
    };

    // determinism guard: a stochastic f makes the comparison meaningless
    double base = eval(point);
    double again = eval(point);
    if (!(base == again))
        throw StateError("grad_check: function is not deterministic (" + std::to_string(base) +
                         " vs " + std::to_string(again) + ")");

    // analytic gradients
    Tape tape;
    std::vector<Variable> vars;
    vars.reserve(point.size());
    for (const Tensor& t : point) vars.push_back(tape.leaf(t, true));
    Variable root = f(tape, vars);
    tape.backward(root);
    std::vector<Tensor> analytic;
    analytic.reserve(vars.size());
    for (const Variable& v : vars) analytic.push_back(v.grad());

    GradCheckReport report;
    Rng pick_rng(derive_seed(coord_seed, "grad_check_coords"));
    std::vector<Tensor> work = point;
    for (std::size_t ti = 0; ti < point.size(); ++ti) {
        std::size_t n = point[ti].numel();
        std::vector<std::size_t> coords;
        if (max_coords_per_tensor == 0 || n <= max_coords_per_tensor) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            for (std::size_t i = 0; i < max_coords_per_tensor; ++i)
                coords.push_back(static_cast<std::size_t>(pick_rng.next_below(n)));
        }
        for (std::size_t c : coords) {
            double orig = work[ti][c];
            work[ti][c] = orig + step;
            double fp = eval(work);
            work[ti][c] = orig - step;
            double fm = eval(work);
            work[ti][c] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: non-finite function value during perturbation");
            double numeric = (fp - fm) / (2.0 * step);
            double a = analytic[ti][c];
            double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            double rel = std::fabs(a - numeric) / denom;
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_coord =
                    "tensor " + std::to_string(ti) + " coord " + std::to_string(c);
            }
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace arc
