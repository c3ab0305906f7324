// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over dense Eigen matrices.
//
// Every op computes its value eagerly and records a node whose backward rule
// is itself composed of catalog ops, so gradients returned by grad() carry
// graphs of their own and can be differentiated again (double backprop).
// Scalars are 1x1 tensors; vectors are 1xN or Nx1. A graph is confined to the
// thread that built it; leaf tensors without graphs are freely shareable.

#pragma once

#include "ilm/common.hpp"

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace ilm {

template <typename S>
class Tensor;

namespace detail {

inline thread_local int no_grad_depth = 0;

template <typename S>
struct Node : std::enable_shared_from_this<Node<S>> {
    using BackwardFn =
        std::function<std::vector<Tensor<S>>(const Tensor<S>& self, const Tensor<S>& gout)>;

    Mat<S> value;
    const char* op = nullptr;  // null for leaves
    std::vector<Tensor<S>> parents;
    BackwardFn backward;
};

}  // namespace detail

/// Suppresses graph recording for the current thread while alive.
struct NoGradGuard {
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

template <typename S>
class Tensor {
public:
    using Node = detail::Node<S>;

    Tensor() = default;
    explicit Tensor(Mat<S> v) : n_(std::make_shared<Node>()) { n_->value = std::move(v); }

    static Tensor scalar(S v) {
        Mat<S> m(1, 1);
        m(0, 0) = v;
        return Tensor(std::move(m));
    }
    static Tensor zeros(Index r, Index c) { return Tensor(Mat<S>::Zero(r, c)); }
    static Tensor ones(Index r, Index c) { return Tensor(Mat<S>::Constant(r, c, S(1))); }
    static Tensor full(Index r, Index c, S v) { return Tensor(Mat<S>::Constant(r, c, v)); }

    bool defined() const { return n_ != nullptr; }
    const Mat<S>& value() const { return n_->value; }
    Mat<S>& mutable_value() { return n_->value; }  // parameters only; never mid-graph
    Index rows() const { return n_->value.rows(); }
    Index cols() const { return n_->value.cols(); }
    Index size() const { return n_->value.size(); }
    S item() const {
        if (size() != 1) fail("item: tensor has " + std::to_string(size()) + " elements");
        return n_->value(0, 0);
    }

    bool has_graph() const { return defined() && n_->op != nullptr; }
    const char* op() const { return n_->op; }
    const Tensor& parent(size_t i) const { return n_->parents[i]; }
    Node* node() const { return n_.get(); }
    std::shared_ptr<Node> shared_node() const { return n_; }

    /// Value-copy without graph history.
    Tensor detach() const { return Tensor(n_->value); }

    static Tensor from_node(std::shared_ptr<Node> n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

template <typename S>
Tensor<S> make_op(Mat<S> value, const char* op, std::vector<Tensor<S>> parents,
                  typename Node<S>::BackwardFn backward) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    if (grad_enabled()) {
        n->op = op;
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    return Tensor<S>::from_node(std::move(n));
}

template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        fail(std::string(op) + ": shape mismatch (" + shape_str(a.rows(), a.cols()) + " vs " +
             shape_str(b.rows(), b.cols()) + ")");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive catalog. Each backward rule emits catalog ops only.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape("add", a, b);
    return detail::make_op<S>(
        a.value() + b.value(), "add", {a, b},
        [](const Tensor<S>&, const Tensor<S>& g) { return std::vector<Tensor<S>>{g, g}; });
}

template <typename S>
Tensor<S> scalar_mul(const Tensor<S>& a, S c) {
    return detail::make_op<S>(a.value() * c, "scalar_mul", {a},
                              [c](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{scalar_mul(g, c)};
                              });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape("sub", a, b);
    return detail::make_op<S>(a.value() - b.value(), "sub", {a, b},
                              [](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{g, scalar_mul(g, S(-1))};
                              });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape("mul", a, b);
    return detail::make_op<S>(a.value().cwiseProduct(b.value()), "mul", {a, b},
                              [](const Tensor<S>& self, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{mul(g, self.parent(1)),
                                                                mul(g, self.parent(0))};
                              });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape("div", a, b);
    return detail::make_op<S>(
        a.value().cwiseQuotient(b.value()), "div", {a, b},
        [](const Tensor<S>& self, const Tensor<S>& g) {
            Tensor<S> ga = div(g, self.parent(1));
            Tensor<S> gb = scalar_mul(mul(g, div(self, self.parent(1))), S(-1));
            return std::vector<Tensor<S>>{ga, gb};
        });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.cols() != b.rows())
        fail("matmul: shape mismatch (" + shape_str(a.rows(), a.cols()) + " vs " +
             shape_str(b.rows(), b.cols()) + ")");
    return detail::make_op<S>(
        a.value() * b.value(), "matmul", {a, b},
        [](const Tensor<S>& self, const Tensor<S>& g) {
            return std::vector<Tensor<S>>{matmul(g, transpose(self.parent(1))),
                                          matmul(transpose(self.parent(0)), g)};
        });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
    return detail::make_op<S>(a.value().transpose(), "transpose", {a},
                              [](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{transpose(g)};
                              });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
    return detail::make_op<S>(a.value().array().exp().matrix(), "exp", {a},
                              [](const Tensor<S>& self, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{mul(g, self)};
                              });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
    return detail::make_op<S>(a.value().array().log().matrix(), "log", {a},
                              [](const Tensor<S>& self, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{div(g, self.parent(0))};
                              });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
    return detail::make_op<S>(
        a.value().array().tanh().matrix(), "tanh", {a},
        [](const Tensor<S>& self, const Tensor<S>& g) {
            Tensor<S> one = Tensor<S>::ones(self.rows(), self.cols());
            return std::vector<Tensor<S>>{mul(g, sub(one, mul(self, self)))};
        });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& a) {
    return detail::make_op<S>(a.value().array().sqrt().matrix(), "sqrt", {a},
                              [](const Tensor<S>& self, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{div(scalar_mul(g, S(0.5)), self)};
                              });
}

/// Gradient is defined as zero everywhere; nothing propagates through sign().
template <typename S>
Tensor<S> sign(const Tensor<S>& a) {
    return detail::make_op<S>(a.value().array().sign().matrix(), "sign", {a},
                              [](const Tensor<S>&, const Tensor<S>&) {
                                  return std::vector<Tensor<S>>{Tensor<S>()};
                              });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
    Index r = a.rows(), c = a.cols();
    Mat<S> v(1, 1);
    v(0, 0) = a.value().sum();
    return detail::make_op<S>(std::move(v), "sum", {a},
                              [r, c](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{broadcast_full(g, r, c)};
                              });
}

template <typename S>
Tensor<S> row_sum(const Tensor<S>& a) {
    Index c = a.cols();
    return detail::make_op<S>(a.value().rowwise().sum(), "row_sum", {a},
                              [c](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{broadcast_cols(g, c)};
                              });
}

template <typename S>
Tensor<S> col_sum(const Tensor<S>& a) {
    Index r = a.rows();
    Mat<S> v = a.value().colwise().sum();
    return detail::make_op<S>(std::move(v), "col_sum", {a},
                              [r](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{broadcast_rows(g, r)};
                              });
}

/// Nx1 -> NxC by repeating the column.
template <typename S>
Tensor<S> broadcast_cols(const Tensor<S>& v, Index c) {
    if (v.cols() != 1) fail("broadcast_cols: expected Nx1, got " + shape_str(v.rows(), v.cols()));
    return detail::make_op<S>(v.value().replicate(1, c), "broadcast_cols", {v},
                              [](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{row_sum(g)};
                              });
}

/// 1xC -> RxC by repeating the row.
template <typename S>
Tensor<S> broadcast_rows(const Tensor<S>& v, Index r) {
    if (v.rows() != 1) fail("broadcast_rows: expected 1xC, got " + shape_str(v.rows(), v.cols()));
    return detail::make_op<S>(v.value().replicate(r, 1), "broadcast_rows", {v},
                              [](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{col_sum(g)};
                              });
}

/// 1x1 -> RxC.
template <typename S>
Tensor<S> broadcast_full(const Tensor<S>& s, Index r, Index c) {
    if (s.size() != 1) fail("broadcast_full: expected 1x1, got " + shape_str(s.rows(), s.cols()));
    return detail::make_op<S>(Mat<S>::Constant(r, c, s.value()(0, 0)), "broadcast_full", {s},
                              [](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{sum(g)};
                              });
}

/// Gathers rows of `table` at `idx`; embedding_lookup is this op.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& table, std::vector<int> idx) {
    const Index rows = table.rows();
    Mat<S> out(static_cast<Index>(idx.size()), table.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= rows)
            fail("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                 std::to_string(rows) + " rows");
        out.row(static_cast<Index>(i)) = table.value().row(idx[i]);
    }
    return detail::make_op<S>(std::move(out), "gather_rows", {table},
                              [idx, rows](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{scatter_rows(g, idx, rows)};
                              });
}

template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& idx) {
    return gather_rows(table, idx);
}

/// Scatter-add rows of `g` into a zero RxC matrix at `idx` (adjoint of gather).
template <typename S>
Tensor<S> scatter_rows(const Tensor<S>& g, std::vector<int> idx, Index rows) {
    if (static_cast<size_t>(g.rows()) != idx.size()) fail("scatter_rows: row/index count mismatch");
    Mat<S> out = Mat<S>::Zero(rows, g.cols());
    for (size_t i = 0; i < idx.size(); ++i) out.row(idx[i]) += g.value().row(static_cast<Index>(i));
    return detail::make_op<S>(std::move(out), "scatter_rows", {g},
                              [idx](const Tensor<S>&, const Tensor<S>& gout) {
                                  return std::vector<Tensor<S>>{gather_rows(gout, idx)};
                              });
}

/// Picks x(i, idx[i]) into an Nx1 column.
template <typename S>
Tensor<S> pick(const Tensor<S>& x, std::vector<int> idx) {
    if (static_cast<size_t>(x.rows()) != idx.size()) fail("pick: row/index count mismatch");
    const Index cols = x.cols();
    Mat<S> out(x.rows(), 1);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= cols)
            fail("pick: index " + std::to_string(idx[i]) + " out of range for " +
                 std::to_string(cols) + " cols");
        out(static_cast<Index>(i), 0) = x.value()(static_cast<Index>(i), idx[i]);
    }
    return detail::make_op<S>(std::move(out), "pick", {x},
                              [idx, cols](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{pick_scatter(g, idx, cols)};
                              });
}

template <typename S>
Tensor<S> pick_scatter(const Tensor<S>& g, std::vector<int> idx, Index cols) {
    if (g.cols() != 1 || static_cast<size_t>(g.rows()) != idx.size())
        fail("pick_scatter: expected Nx1 matching indices");
    Mat<S> out = Mat<S>::Zero(g.rows(), cols);
    for (size_t i = 0; i < idx.size(); ++i)
        out(static_cast<Index>(i), idx[i]) = g.value()(static_cast<Index>(i), 0);
    return detail::make_op<S>(std::move(out), "pick_scatter", {g},
                              [idx](const Tensor<S>&, const Tensor<S>& gout) {
                                  return std::vector<Tensor<S>>{pick(gout, idx)};
                              });
}

/// Submatrix view [i:i+p, j:j+q] as a copy.
template <typename S>
Tensor<S> block(const Tensor<S>& x, Index i, Index j, Index p, Index q) {
    if (i < 0 || j < 0 || i + p > x.rows() || j + q > x.cols())
        fail("block: range out of bounds for " + shape_str(x.rows(), x.cols()));
    Index r = x.rows(), c = x.cols();
    return detail::make_op<S>(x.value().block(i, j, p, q), "block", {x},
                              [i, j, r, c](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{pad_block(g, i, j, r, c)};
                              });
}

/// Places x into a zero RxC matrix at offset (i, j).
template <typename S>
Tensor<S> pad_block(const Tensor<S>& x, Index i, Index j, Index r, Index c) {
    if (i + x.rows() > r || j + x.cols() > c) fail("pad_block: block exceeds target shape");
    Mat<S> out = Mat<S>::Zero(r, c);
    out.block(i, j, x.rows(), x.cols()) = x.value();
    Index p = x.rows(), q = x.cols();
    return detail::make_op<S>(std::move(out), "pad_block", {x},
                              [i, j, p, q](const Tensor<S>&, const Tensor<S>& g) {
                                  return std::vector<Tensor<S>>{block(g, i, j, p, q)};
                              });
}

// ---------------------------------------------------------------------------
// Composites (differentiable through the primitives above).
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
    return scalar_mul(sum(a), S(1) / static_cast<S>(a.size()));
}

/// Row-wise (axis=1) or column-wise (axis=0) softmax. The shift by the row max
/// is an identity for any fixed shift, so detaching it keeps all derivatives
/// exact.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis = 1) {
    if (axis == 0) return transpose(softmax(transpose(x), 1));
    if (axis != 1) fail("softmax: axis must be 0 or 1");
    Tensor<S> m(Mat<S>(x.value().rowwise().maxCoeff()));
    Tensor<S> e = exp(sub(x, broadcast_cols(m, x.cols())));
    return div(e, broadcast_cols(row_sum(e), x.cols()));
}

/// Row-wise standardization with population variance; no affine terms.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, S eps) {
    if (eps <= S(0)) fail("layer_norm: eps must be > 0");
    const S inv_d = S(1) / static_cast<S>(x.cols());
    Tensor<S> mu = scalar_mul(row_sum(x), inv_d);
    Tensor<S> xc = sub(x, broadcast_cols(mu, x.cols()));
    Tensor<S> var = scalar_mul(row_sum(mul(xc, xc)), inv_d);
    Tensor<S> stddev = sqrt(add(var, Tensor<S>::full(x.rows(), 1, eps)));
    return div(xc, broadcast_cols(stddev, x.cols()));
}

/// Mean over rows of -log softmax(logits)[target]; targets are class indices.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets) {
    if (static_cast<size_t>(logits.rows()) != targets.size())
        fail("cross_entropy: " + std::to_string(logits.rows()) + " rows vs " +
             std::to_string(targets.size()) + " targets");
    for (int t : targets)
        if (t < 0 || t >= logits.cols())
            fail("cross_entropy: target " + std::to_string(t) + " out of range for vocab " +
                 std::to_string(logits.cols()));
    Tensor<S> m(Mat<S>(logits.value().rowwise().maxCoeff()));
    Tensor<S> shifted = sub(logits, broadcast_cols(m, logits.cols()));
    Tensor<S> lse = add(log(row_sum(exp(shifted))), m);
    return mean(sub(lse, pick(logits, targets)));
}

template <typename S>
Tensor<S> l2_norm(const Tensor<S>& x) {
    return sqrt(sum(mul(x, x)));
}

/// Flattened cosine similarity; caller is responsible for nonzero norms.
template <typename S>
Tensor<S> cosine_similarity(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape("cosine_similarity", a, b);
    return div(sum(mul(a, b)), mul(l2_norm(a), l2_norm(b)));
}

/// tanh-approximation GELU.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    const S k = S(0.7978845608028654);  // sqrt(2/pi)
    Tensor<S> x3 = mul(mul(x, x), x);
    Tensor<S> inner = scalar_mul(add(x, scalar_mul(x3, S(0.044715))), k);
    Tensor<S> one = Tensor<S>::ones(x.rows(), x.cols());
    return scalar_mul(mul(x, add(one, tanh(inner))), S(0.5));
}

// ---------------------------------------------------------------------------
// grad(): reverse pass over the recorded graph.
// ---------------------------------------------------------------------------

namespace detail {

/// Reachable nodes of one computation in topological order (parents first).
template <typename S>
std::vector<Node<S>*> graph_tape(Node<S>* root) {
    std::vector<Node<S>*> tape;
    std::unordered_set<Node<S>*> seen{root};
    std::vector<std::pair<Node<S>*, size_t>> stack{{root, 0}};
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<S>* p = n->parents[next++].node();
            if (p && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            tape.push_back(n);
            stack.pop_back();
        }
    }
    return tape;
}

}  // namespace detail

/// d(scalar)/d(wrt_i) for each wrt tensor. Tensors not participating in the
/// graph get a zero gradient. With create_graph the results record graphs of
/// their own, so grad() composes with itself.
template <typename S>
std::vector<Tensor<S>> grad(const Tensor<S>& scalar, const std::vector<Tensor<S>>& wrt,
                            bool create_graph = false) {
    if (!scalar.defined() || scalar.size() != 1)
        fail("grad: output must have exactly one element");

    auto tape = detail::graph_tape(scalar.node());
    std::unordered_map<detail::Node<S>*, Tensor<S>> adjoint;
    adjoint.reserve(tape.size());
    adjoint[scalar.node()] = Tensor<S>::ones(1, 1);

    std::unique_ptr<NoGradGuard> guard;
    if (!create_graph) guard = std::make_unique<NoGradGuard>();

    for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
        detail::Node<S>* n = *it;
        auto got = adjoint.find(n);
        if (got == adjoint.end() || !n->backward) continue;
        Tensor<S> self = Tensor<S>::from_node(n->shared_from_this());
        std::vector<Tensor<S>> contrib = n->backward(self, got->second);
        for (size_t i = 0; i < contrib.size(); ++i) {
            if (!contrib[i].defined()) continue;  // zero-gradient path (e.g. sign)
            detail::Node<S>* p = n->parents[i].node();
            auto slot = adjoint.find(p);
            if (slot == adjoint.end())
                adjoint.emplace(p, contrib[i]);
            else
                slot->second = add(slot->second, contrib[i]);
        }
    }

    std::vector<Tensor<S>> out;
    out.reserve(wrt.size());
    for (const auto& w : wrt) {
        auto got = adjoint.find(w.node());
        out.push_back(got != adjoint.end() ? got->second : Tensor<S>::zeros(w.rows(), w.cols()));
    }
    return out;
}

/// Central-difference gradient of a scalar-valued function; the independent
/// oracle used by the gradient checks. Run in 64-bit.
template <typename S, typename F>
Tensor<S> finite_diff(F&& f, const Tensor<S>& x, S step) {
    if (step <= S(0)) fail("finite_diff: step must be > 0");
    Mat<S> g(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        for (Index j = 0; j < x.cols(); ++j) {
            Mat<S> hi = x.value(), lo = x.value();
            hi(i, j) += step;
            lo(i, j) -= step;
            S fhi = f(Tensor<S>(hi)).item();
            S flo = f(Tensor<S>(lo)).item();
            g(i, j) = (fhi - flo) / (S(2) * step);
        }
    }
    return Tensor<S>(std::move(g));
}

}  // namespace ilm
