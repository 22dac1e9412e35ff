#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "arc/common.hpp"
#include "arc/tensor.hpp"

namespace arc {

class Tape;

/// Handle to one node of a computation tape: a value tensor, a lazily
/// materialized gradient of the same shape, and a requires-grad flag.
/// Variables are cheap to copy; the tape owns all storage.
class Variable {
  public:
    Variable() : tape_(nullptr), id_(-1) {}
    Variable(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
    const std::vector<int>& shape() const { return value().shape(); }

  private:
    Tape* tape_;
    int id_;
};

/// Define-by-run tape: ops append nodes in topological order (parents always
/// precede children) and register backward closures. One backward pass per
/// tape; building further ops after backward is allowed but re-running
/// backward is a StateError.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, int)>;

    struct Node {
        Tensor value;
        Tensor grad;  // empty until touched; see grad_ref()
        BackwardFn backward;
        bool requires_grad = false;
        bool grad_live = false;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Variable leaf(Tensor value, bool requires_grad) {
        nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, requires_grad, false});
        return Variable(this, static_cast<int>(nodes_.size()) - 1);
    }

    Variable constant(Tensor value) { return leaf(std::move(value), false); }

    Variable node(Tensor value, bool requires_grad, BackwardFn backward) {
        nodes_.push_back(
            Node{std::move(value), Tensor{}, std::move(backward), requires_grad, false});
        return Variable(this, static_cast<int>(nodes_.size()) - 1);
    }

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    // Gradient buffer of a node, materialized to zeros on first touch.
    Tensor& grad_ref(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad_live) {
            n.grad = Tensor::zeros(n.value.shape());
            n.grad_live = true;
        }
        return n.grad;
    }

    const Tensor& grad(int id) {
        return grad_ref(id);  // zeros if never written
    }

    bool grad_live(int id) const { return nodes_[static_cast<std::size_t>(id)].grad_live; }

    std::size_t size() const { return nodes_.size(); }

    /// Reverse topological sweep from `root`, which must be scalar-shaped.
    /// Gradients accumulate additively across fan-out.
    void backward(const Variable& root) {
        if (root.tape() != this) throw StateError("backward: root belongs to a different tape");
        if (backward_done_) throw StateError("backward: tape already back-propagated");
        const Tensor& rv = value(root.id());
        if (rv.numel() != 1)
            throw ShapeError("backward: root must be scalar-shaped, got " + rv.shape_str());
        if (!rv.all_finite()) throw NumericError("backward: root value is not finite");
        backward_done_ = true;
        grad_ref(root.id()).data()[0] = 1.0;
        for (int i = root.id(); i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.requires_grad || !n.grad_live || !n.backward) continue;
            n.backward(*this, i);
        }
    }

    bool backward_done() const { return backward_done_; }

  private:
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

inline const Tensor& Variable::value() const { return tape_->value(id_); }
inline const Tensor& Variable::grad() const { return const_cast<Tape*>(tape_)->grad_ref(id_); }
inline bool Variable::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline Tape* same_tape(const Variable& a, const Variable& b, const char* op) {
    if (a.tape() != b.tape())
        throw StateError(std::string(op) + ": operands belong to different tapes");
    return a.tape();
}

// Shapes for a binary elementwise op: identical, or one operand's shape equals
// the other's with the leading axis dropped (broadcast over that axis only).
// Returns (out_shape, which operand is broadcast: 0 none, 1 lhs, 2 rhs).
inline std::pair<std::vector<int>, int> broadcast_shape(const Tensor& a, const Tensor& b,
                                                        const char* op) {
    if (a.shape() == b.shape()) return {a.shape(), 0};
    auto tail_matches = [](const Tensor& big, const Tensor& small) {
        if (big.rank() != small.rank() + 1) return false;
        for (int i = 0; i < small.rank(); ++i)
            if (big.shape()[static_cast<std::size_t>(i + 1)] !=
                small.shape()[static_cast<std::size_t>(i)])
                return false;
        return true;
    };
    if (tail_matches(a, b)) return {a.shape(), 2};
    if (tail_matches(b, a)) return {b.shape(), 1};
    throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                     " do not conform");
}

// Accumulate `g` (shape of the broadcast output) into the gradient of the
// smaller operand by summing over the leading axis.
inline void reduce_into(Tensor& small_grad, const Tensor& g) {
    std::size_t n = small_grad.numel();
    std::size_t reps = g.numel() / n;
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t i = 0; i < n; ++i) small_grad[i] += g[r * n + i];
}

template <typename Fwd>
Variable binary_elementwise(const Variable& a, const Variable& b, const char* op, Fwd fwd,
                            Tape::BackwardFn backward) {
    Tape* t = same_tape(a, b, op);
    auto [shape, bcast] = broadcast_shape(a.value(), b.value(), op);
    Tensor out(shape);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    std::size_t n = out.numel();
    std::size_t an = av.numel(), bn = bv.numel();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i % an], bv[i % bn]);
    bool rg = a.requires_grad() || b.requires_grad();
    return t->node(std::move(out), rg, std::move(backward));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and shape primitives
// ---------------------------------------------------------------------------

inline Variable add(const Variable& a, const Variable& b) {
    int ai = a.id(), bi = b.id();
    return detail::binary_elementwise(
        a, b, "add", [](double x, double y) { return x + y; },
        [ai, bi](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            if (t.requires_grad(ai)) {
                Tensor& ga = t.grad_ref(ai);
                if (ga.numel() == g.numel())
                    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                else
                    detail::reduce_into(ga, g);
            }
            if (t.requires_grad(bi)) {
                Tensor& gb = t.grad_ref(bi);
                if (gb.numel() == g.numel())
                    for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
                else
                    detail::reduce_into(gb, g);
            }
        });
}

inline Variable sub(const Variable& a, const Variable& b) {
    int ai = a.id(), bi = b.id();
    return detail::binary_elementwise(
        a, b, "sub", [](double x, double y) { return x - y; },
        [ai, bi](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            if (t.requires_grad(ai)) {
                Tensor& ga = t.grad_ref(ai);
                if (ga.numel() == g.numel())
                    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                else
                    detail::reduce_into(ga, g);
            }
            if (t.requires_grad(bi)) {
                Tensor& gb = t.grad_ref(bi);
                if (gb.numel() == g.numel())
                    for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
                else {
                    Tensor neg(g.shape());
                    for (std::size_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
                    detail::reduce_into(gb, neg);
                }
            }
        });
}

// elementwise product
inline Variable mul(const Variable& a, const Variable& b) {
    int ai = a.id(), bi = b.id();
    return detail::binary_elementwise(
        a, b, "mul", [](double x, double y) { return x * y; },
        [ai, bi](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            const Tensor& av = t.value(ai);
            const Tensor& bv = t.value(bi);
            std::size_t an = av.numel(), bn = bv.numel();
            if (t.requires_grad(ai)) {
                Tensor& ga = t.grad_ref(ai);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i % an] += g[i] * bv[i % bn];
            }
            if (t.requires_grad(bi)) {
                Tensor& gb = t.grad_ref(bi);
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i % bn] += g[i] * av[i % an];
            }
        });
}

inline Variable scale(const Variable& x, double c) {
    Tensor out(x.value().shape());
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * c;
    int xi = x.id();
    return x.tape()->node(std::move(out), x.requires_grad(), [xi, c](Tape& t, int self) {
        if (!t.requires_grad(xi)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(xi);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * c;
    });
}

inline Variable tanh(const Variable& x) {
    Tensor out(x.value().shape());
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(xv[i]);
    int xi = x.id();
    return x.tape()->node(std::move(out), x.requires_grad(), [xi](Tape& t, int self) {
        if (!t.requires_grad(xi)) return;
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& gx = t.grad_ref(xi);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

inline Variable relu(const Variable& x) {
    Tensor out(x.value().shape());
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    int xi = x.id();
    return x.tape()->node(std::move(out), x.requires_grad(), [xi](Tape& t, int self) {
        if (!t.requires_grad(xi)) return;
        const Tensor& g = t.grad(self);
        const Tensor& xv2 = t.value(xi);
        Tensor& gx = t.grad_ref(xi);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (xv2[i] > 0.0) gx[i] += g[i];
    });
}

/// Concatenate rank-1 or rank-2 tensors along `axis`.
inline Variable concat(const std::vector<Variable>& parts, int axis = 0) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    Tape* t = parts[0].tape();
    int rank = parts[0].value().rank();
    if (rank < 1 || rank > 2) throw ShapeError("concat: rank must be 1 or 2");
    if (axis < 0 || axis >= rank) throw ShapeError("concat: bad axis");
    bool rg = false;
    int joined = 0;
    for (const Variable& p : parts) {
        detail::same_tape(parts[0], p, "concat");
        if (p.value().rank() != rank)
            throw ShapeError("concat: mixed ranks " + parts[0].value().shape_str() + " and " +
                             p.value().shape_str());
        for (int d = 0; d < rank; ++d)
            if (d != axis && p.value().shape()[static_cast<std::size_t>(d)] !=
                                 parts[0].value().shape()[static_cast<std::size_t>(d)])
                throw ShapeError("concat: shapes " + parts[0].value().shape_str() + " and " +
                                 p.value().shape_str() + " differ off-axis");
        joined += p.value().dim(axis);
        rg = rg || p.requires_grad();
    }
    std::vector<int> shape = parts[0].value().shape();
    shape[static_cast<std::size_t>(axis)] = joined;
    Tensor out(shape);
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (const Variable& p : parts) ids.push_back(p.id());

    if (rank == 1 || axis == 0) {
        std::size_t off = 0;
        for (const Variable& p : parts) {
            const Tensor& v = p.value();
            std::copy(v.data().begin(), v.data().end(), out.data().begin() + off);
            off += v.numel();
        }
        return t->node(std::move(out), rg, [ids](Tape& tp, int self) {
            const Tensor& g = tp.grad(self);
            std::size_t off2 = 0;
            for (int id : ids) {
                std::size_t n = tp.value(id).numel();
                if (tp.requires_grad(id)) {
                    Tensor& gp = tp.grad_ref(id);
                    for (std::size_t i = 0; i < n; ++i) gp[i] += g[off2 + i];
                }
                off2 += n;
            }
        });
    }
    // rank 2, axis 1
    int rows = parts[0].value().dim(0);
    int col_off = 0;
    for (const Variable& p : parts) {
        const Tensor& v = p.value();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < v.dim(1); ++c) out.at(r, col_off + c) = v.at(r, c);
        col_off += v.dim(1);
    }
    return t->node(std::move(out), rg, [ids, rows](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        int off2 = 0;
        for (int id : ids) {
            int cols = tp.value(id).dim(1);
            if (tp.requires_grad(id)) {
                Tensor& gp = tp.grad_ref(id);
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c) gp.at(r, c) += g.at(r, off2 + c);
            }
            off2 += cols;
        }
    });
}

inline Variable reduce_sum(const Variable& x) {
    const Tensor& xv = x.value();
    double s = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i];  // sequential row-major
    int xi = x.id();
    return x.tape()->node(Tensor::scalar(s), x.requires_grad(), [xi](Tape& t, int self) {
        if (!t.requires_grad(xi)) return;
        double g = t.grad(self)[0];
        Tensor& gx = t.grad_ref(xi);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

inline Variable reduce_mean(const Variable& x) {
    const Tensor& xv = x.value();
    double s = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i];
    double inv = 1.0 / static_cast<double>(xv.numel());
    int xi = x.id();
    return x.tape()->node(Tensor::scalar(s * inv), x.requires_grad(), [xi, inv](Tape& t, int self) {
        if (!t.requires_grad(xi)) return;
        double g = t.grad(self)[0] * inv;
        Tensor& gx = t.grad_ref(xi);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

// column means of a 2-D tensor: (m, n) -> (n)
inline Variable mean_rows(const Variable& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ShapeError("mean_rows: expected rank 2, got " + xv.shape_str());
    int m = xv.dim(0), n = xv.dim(1);
    Tensor out({n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] += xv.at(i, j);
    double inv = 1.0 / m;
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] *= inv;
    int xi = x.id();
    return x.tape()->node(std::move(out), x.requires_grad(), [xi, m, n, inv](Tape& t, int self) {
        if (!t.requires_grad(xi)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(xi);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) gx.at(i, j) += g[static_cast<std::size_t>(j)] * inv;
    });
}

/// Rows of a parameter matrix selected by integer ids: (V, d) x ids(n) -> (n, d).
inline Variable embedding(const Variable& table, const std::vector<int>& ids) {
    const Tensor& tv = table.value();
    if (tv.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + tv.shape_str());
    int vocab = tv.dim(0), d = tv.dim(1);
    for (int id : ids)
        if (id < 0 || id >= vocab)
            throw IndexError("embedding: id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(vocab) + ")");
    int n = static_cast<int>(ids.size());
    if (n == 0) throw ShapeError("embedding: empty id sequence");
    Tensor out({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = tv.at(ids[static_cast<std::size_t>(i)], j);
    int ti = table.id();
    return table.tape()->node(std::move(out), table.requires_grad(),
                              [ti, ids, d](Tape& t, int self) {
                                  if (!t.requires_grad(ti)) return;
                                  const Tensor& g = t.grad(self);
                                  Tensor& gt = t.grad_ref(ti);
                                  for (std::size_t i = 0; i < ids.size(); ++i)
                                      for (int j = 0; j < d; ++j)
                                          gt.at(ids[i], j) += g.at(static_cast<int>(i), j);
                              });
}

/// (m, n) @ (n, k) -> (m, k), or (m, n) @ (n) -> (m).
inline Variable matmul(const Variable& a, const Variable& b) {
    Tape* t = detail::same_tape(a, b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || (bv.rank() != 2 && bv.rank() != 1))
        throw ShapeError("matmul: unsupported ranks " + av.shape_str() + " @ " + bv.shape_str());
    int m = av.dim(0), n = av.dim(1);
    if (bv.dim(0) != n)
        throw ShapeError("matmul: shapes " + av.shape_str() + " and " + bv.shape_str() +
                         " do not conform");
    int ai = a.id(), bi = b.id();
    bool rg = a.requires_grad() || b.requires_grad();
    if (bv.rank() == 1) {
        Tensor out({m});
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += av.at(i, j) * bv[static_cast<std::size_t>(j)];
            out[static_cast<std::size_t>(i)] = s;
        }
        return t->node(std::move(out), rg, [ai, bi, m, n](Tape& tp, int self) {
            const Tensor& g = tp.grad(self);
            const Tensor& A = tp.value(ai);
            const Tensor& x = tp.value(bi);
            if (tp.requires_grad(ai)) {
                Tensor& ga = tp.grad_ref(ai);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        ga.at(i, j) += g[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
            }
            if (tp.requires_grad(bi)) {
                Tensor& gx = tp.grad_ref(bi);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        gx[static_cast<std::size_t>(j)] += A.at(i, j) * g[static_cast<std::size_t>(i)];
            }
        });
    }
    int k = bv.dim(1);
    Tensor out({m, k});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double aij = av.at(i, j);
            for (int c = 0; c < k; ++c) out.at(i, c) += aij * bv.at(j, c);
        }
    return t->node(std::move(out), rg, [ai, bi, m, n, k](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const Tensor& A = tp.value(ai);
        const Tensor& B = tp.value(bi);
        if (tp.requires_grad(ai)) {
            Tensor& ga = tp.grad_ref(ai);  // g @ B^T
            for (int i = 0; i < m; ++i)
                for (int c = 0; c < k; ++c) {
                    double gic = g.at(i, c);
                    for (int j = 0; j < n; ++j) ga.at(i, j) += gic * B.at(j, c);
                }
        }
        if (tp.requires_grad(bi)) {
            Tensor& gb = tp.grad_ref(bi);  // A^T @ g
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    double aij = A.at(i, j);
                    for (int c = 0; c < k; ++c) gb.at(j, c) += aij * g.at(i, c);
                }
        }
    });
}

inline Variable transpose(const Variable& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + xv.shape_str());
    int m = xv.dim(0), n = xv.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = xv.at(i, j);
    int xi = x.id();
    return x.tape()->node(std::move(out), x.requires_grad(), [xi, m, n](Tape& t, int self) {
        if (!t.requires_grad(xi)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(xi);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) gx.at(i, j) += g.at(j, i);
    });
}

inline Variable dot(const Variable& a, const Variable& b) {
    Tape* t = detail::same_tape(a, b, "dot");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 1 || bv.rank() != 1 || av.dim(0) != bv.dim(0))
        throw ShapeError("dot: shapes " + av.shape_str() + " and " + bv.shape_str() +
                         " do not conform");
    double s = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av[i] * bv[i];
    int ai = a.id(), bi = b.id();
    bool rg = a.requires_grad() || b.requires_grad();
    return t->node(Tensor::scalar(s), rg, [ai, bi](Tape& tp, int self) {
        double g = tp.grad(self)[0];
        const Tensor& av2 = tp.value(ai);
        const Tensor& bv2 = tp.value(bi);
        if (tp.requires_grad(ai)) {
            Tensor& ga = tp.grad_ref(ai);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g * bv2[i];
        }
        if (tp.requires_grad(bi)) {
            Tensor& gb = tp.grad_ref(bi);
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g * av2[i];
        }
    });
}

// single element of a rank-1 tensor as a scalar
inline Variable pick(const Variable& x, int index) {
    const Tensor& xv = x.value();
    if (xv.rank() != 1) throw ShapeError("pick: expected rank 1, got " + xv.shape_str());
    if (index < 0 || index >= xv.dim(0))
        throw IndexError("pick: index " + std::to_string(index) + " out of range [0, " +
                         std::to_string(xv.dim(0)) + ")");
    int xi = x.id();
    return x.tape()->node(Tensor::scalar(xv[static_cast<std::size_t>(index)]), x.requires_grad(),
                          [xi, index](Tape& t, int self) {
                              if (!t.requires_grad(xi)) return;
                              t.grad_ref(xi)[static_cast<std::size_t>(index)] += t.grad(self)[0];
                          });
}

// scalars -> rank-1 tensor
inline Variable stack(const std::vector<Variable>& scalars) {
    if (scalars.empty()) throw ShapeError("stack: no operands");
    Tape* t = scalars[0].tape();
    Tensor out({static_cast<int>(scalars.size())});
    bool rg = false;
    std::vector<int> ids;
    ids.reserve(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        detail::same_tape(scalars[0], scalars[i], "stack");
        if (scalars[i].value().numel() != 1)
            throw ShapeError("stack: operand " + std::to_string(i) + " is not scalar-shaped");
        out[i] = scalars[i].value()[0];
        rg = rg || scalars[i].requires_grad();
        ids.push_back(scalars[i].id());
    }
    return t->node(std::move(out), rg, [ids](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (tp.requires_grad(ids[i])) tp.grad_ref(ids[i])[0] += g[i];
    });
}

/// Value copy that blocks gradient flow.
inline Variable detach(const Variable& x) { return x.tape()->constant(x.value()); }

// ---------------------------------------------------------------------------
// stabilized softmax family
// ---------------------------------------------------------------------------

namespace detail {

inline void softmax_rows(const Tensor& in, Tensor& out, double inv_t) {
    int rows = in.rank() == 2 ? in.dim(0) : 1;
    int cols = in.rank() == 2 ? in.dim(1) : in.dim(0);
    for (int r = 0; r < rows; ++r) {
        std::size_t base = static_cast<std::size_t>(r) * cols;
        double mx = in[base];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, in[base + c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            double e = std::exp((in[base + c] - mx) * inv_t);
            out[base + c] = e;
            sum += e;
        }
        double inv = 1.0 / sum;
        for (int c = 0; c < cols; ++c) out[base + c] *= inv;
    }
}

}  // namespace detail

/// Temperature softmax over the last axis (rank 1 or 2): p_i proportional to
/// exp(y_i / T), computed with max-subtraction.
inline Variable softmax_t(const Variable& logits, double temperature) {
    if (temperature <= 0.0)
        throw ParamError("softmax_t: temperature must be positive, got " +
                         std::to_string(temperature));
    const Tensor& xv = logits.value();
    if (xv.rank() < 1 || xv.rank() > 2)
        throw ShapeError("softmax_t: expected rank 1 or 2, got " + xv.shape_str());
    Tensor out(xv.shape());
    detail::softmax_rows(xv, out, 1.0 / temperature);
    if (!out.all_finite()) throw NumericError("softmax_t: non-finite output");
    int xi = logits.id();
    double inv_t = 1.0 / temperature;
    int cols = xv.rank() == 2 ? xv.dim(1) : xv.dim(0);
    int rows = static_cast<int>(xv.numel()) / cols;
    return logits.tape()->node(std::move(out), logits.requires_grad(),
                               [xi, inv_t, rows, cols](Tape& t, int self) {
                                   if (!t.requires_grad(xi)) return;
                                   const Tensor& g = t.grad(self);
                                   const Tensor& p = t.value(self);
                                   Tensor& gx = t.grad_ref(xi);
                                   // dy_j = (1/T) p_j (g_j - sum_i g_i p_i), per row
                                   for (int r = 0; r < rows; ++r) {
                                       std::size_t base = static_cast<std::size_t>(r) * cols;
                                       double gp = 0.0;
                                       for (int c = 0; c < cols; ++c) gp += g[base + c] * p[base + c];
                                       for (int c = 0; c < cols; ++c)
                                           gx[base + c] += inv_t * p[base + c] * (g[base + c] - gp);
                                   }
                               });
}

/// Numerically stable log of softmax at T=1 over the last axis.
inline Variable log_softmax(const Variable& logits) {
    const Tensor& xv = logits.value();
    if (xv.rank() < 1 || xv.rank() > 2)
        throw ShapeError("log_softmax: expected rank 1 or 2, got " + xv.shape_str());
    int cols = xv.rank() == 2 ? xv.dim(1) : xv.dim(0);
    int rows = static_cast<int>(xv.numel()) / cols;
    Tensor out(xv.shape());
    for (int r = 0; r < rows; ++r) {
        std::size_t base = static_cast<std::size_t>(r) * cols;
        double mx = xv[base];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xv[base + c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) sum += std::exp(xv[base + c] - mx);
        double lse = mx + std::log(sum);
        for (int c = 0; c < cols; ++c) out[base + c] = xv[base + c] - lse;
    }
    if (!out.all_finite()) throw NumericError("log_softmax: non-finite output");
    int xi = logits.id();
    return logits.tape()->node(std::move(out), logits.requires_grad(),
                               [xi, rows, cols](Tape& t, int self) {
                                   if (!t.requires_grad(xi)) return;
                                   const Tensor& g = t.grad(self);
                                   const Tensor& y = t.value(self);
                                   Tensor& gx = t.grad_ref(xi);
                                   // dy_j = g_j - softmax_j * sum_i g_i, per row
                                   for (int r = 0; r < rows; ++r) {
                                       std::size_t base = static_cast<std::size_t>(r) * cols;
                                       double gs = 0.0;
                                       for (int c = 0; c < cols; ++c) gs += g[base + c];
                                       for (int c = 0; c < cols; ++c)
                                           gx[base + c] += g[base + c] - std::exp(y[base + c]) * gs;
                                   }
                               });
}

inline Variable operator+(const Variable& a, const Variable& b) { return add(a, b); }
inline Variable operator-(const Variable& a, const Variable& b) { return sub(a, b); }
inline Variable operator*(const Variable& a, const Variable& b) { return mul(a, b); }
inline Variable operator*(const Variable& a, double c) { return scale(a, c); }
inline Variable operator*(double c, const Variable& a) { return scale(a, c); }

}  // namespace arc
