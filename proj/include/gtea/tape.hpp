#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gtea/kernels.hpp"
#include "gtea/tensor.hpp"

namespace gtea::numerics {

template <typename T>
class Tape;

/// Lightweight handle to a value recorded on a tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor<T>& value() const;
    const std::vector<std::size_t>& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
};

/// Define-by-run tape: every operation records its output value and a
/// gradient rule, in topological order. A tape is built per forward pass,
/// owned by a single thread, and consumed by one reverse sweep that visits
/// each record exactly once. Any op that produces a non-finite value throws
/// NumericError naming the operation.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape<T>&, const Tensor<T>&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void reserve(std::size_t n) { nodes_.reserve(n); }
    std::size_t size() const { return nodes_.size(); }

    /// Trainable leaf; its gradient is available after backward().
    Var<T> param(Tensor<T> value) {
        return emplace(std::move(value), "param", true, nullptr);
    }

    /// Non-trainable leaf (inputs, targets, fixed masks).
    Var<T> constant(Tensor<T> value) {
        return emplace(std::move(value), "constant", false, nullptr);
    }

    const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }

    /// Gradient of the last backward() loss w.r.t. v; zeros if v was never
    /// reached by the reverse sweep.
    Tensor<T> grad(Var<T> v) const {
        if (v.id < static_cast<int>(grads_.size()) && !grads_[v.id].empty()) {
            return grads_[v.id];
        }
        return Tensor<T>::zeros(std::vector<std::size_t>(nodes_[v.id].value.shape()));
    }

    /// Reverse accumulation from a scalar loss. Each recorded operation is
    /// visited at most once, in reverse topological order.
    void backward(Var<T> loss) {
        if (!loss.valid() || loss.tape != this) {
            throw ShapeError("backward: loss is not a value on this tape");
        }
        const Tensor<T>& lv = nodes_[loss.id].value;
        if (lv.size() != 1) {
            throw ShapeError("backward: loss must be a scalar, got " + lv.shape_string());
        }
        grads_.assign(nodes_.size(), Tensor<T>());
        grads_[loss.id] = Tensor<T>::full(std::vector<std::size_t>(lv.shape()), T(1));
        for (int i = loss.id; i >= 0; --i) {
            if (grads_[i].empty()) continue;
            Node& n = nodes_[i];
            if (n.backward && n.needs_grad) n.backward(*this, grads_[i]);
        }
    }

    bool needs_grad(int id) const { return nodes_[id].needs_grad; }

    /// Gradient buffer for a node, allocated as zeros on first touch.
    Tensor<T>& grad_ref(int id) {
        if (grads_[id].empty()) {
            grads_[id] = Tensor<T>::zeros(std::vector<std::size_t>(nodes_[id].value.shape()));
        }
        return grads_[id];
    }

    Var<T> emplace(Tensor<T> value, const char* op, bool needs_grad, BackwardFn fn) {
        if (check_finite_ && !value.all_finite()) {
            throw NumericError(std::string("non-finite value produced by '") + op + "'");
        }
        nodes_.push_back(Node{std::move(value), op, needs_grad, std::move(fn)});
        return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    void set_check_finite(bool on) { check_finite_ = on; }

private:
    struct Node {
        Tensor<T> value;
        const char* op;
        bool needs_grad;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
    bool check_finite_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(*this);
}

namespace detail {

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// C (p x r) += A (p x q) * B (q x r); per output element the reduction runs
// in ascending q so results are reproducible under row insertion/removal.
template <typename T>
void mm_acc(const T* a, std::size_t p, std::size_t q, const T* b, std::size_t r, T* c) {
    for (std::size_t i = 0; i < p; ++i) {
        const T* arow = a + i * q;
        T* crow = c + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            const T av = arow[k];
            const T* brow = b + k * r;
            for (std::size_t j = 0; j < r; ++j) crow[j] += av * brow[j];
        }
    }
}

// C (p x q) += G (p x r) * B^T, where B is (q x r).
template <typename T>
void mm_bt_acc(const T* g, std::size_t p, std::size_t r, const T* b, std::size_t q, T* c) {
    for (std::size_t i = 0; i < p; ++i) {
        const T* grow = g + i * r;
        T* crow = c + i * q;
        for (std::size_t k = 0; k < q; ++k) {
            const T* brow = b + k * r;
            T acc = T(0);
            for (std::size_t j = 0; j < r; ++j) acc += grow[j] * brow[j];
            crow[k] += acc;
        }
    }
}

// C (q x r) += A^T * G, where A is (p x q) and G is (p x r).
template <typename T>
void mm_at_acc(const T* a, std::size_t p, std::size_t q, const T* g, std::size_t r, T* c) {
    for (std::size_t i = 0; i < p; ++i) {
        const T* arow = a + i * q;
        const T* grow = g + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            const T av = arow[k];
            T* crow = c + k * r;
            for (std::size_t j = 0; j < r; ++j) crow[j] += av * grow[j];
        }
    }
}

template <typename T>
void check_same_tape(const char* op, Var<T> a, Var<T> b) {
    if (a.tape != b.tape || a.tape == nullptr) {
        throw ShapeError(std::string(op) + ": operands live on different tapes");
    }
}

[[noreturn]] inline void shape_fail(const char* op, const std::string& a, const std::string& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a + " and " + b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops. `add`/`sub` additionally support broadcasting a
// row vector over matrix rows and a one-element tensor over anything;
// `mul` supports the one-element broadcast.
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { kNone, kRowVec, kScalarRhs, kScalarLhs };

template <typename T>
Broadcast classify(const char* op, const Tensor<T>& a, const Tensor<T>& b, bool allow_rowvec) {
    if (a.same_shape(b)) return Broadcast::kNone;
    if (b.size() == 1 && b.rank() <= 1) return Broadcast::kScalarRhs;
    if (a.size() == 1 && a.rank() <= 1) return Broadcast::kScalarLhs;
    if (allow_rowvec && a.rank() == 2 && b.rank() == 1 && a.cols() == b.size()) {
        return Broadcast::kRowVec;
    }
    shape_fail(op, a.shape_string(), b.shape_string());
}

template <typename T, typename Fwd, typename BwdA, typename BwdB>
Var<T> binary_op(const char* op, Var<T> a, Var<T> b, bool allow_rowvec, Fwd fwd, BwdA bwd_a,
                 BwdB bwd_b) {
    detail::check_same_tape(op, a, b);
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    const auto mode = detail::classify(op, av, bv, allow_rowvec);

    const Tensor<T>& big = (mode == detail::Broadcast::kScalarLhs) ? bv : av;
    Tensor<T> out = Tensor<T>::zeros(std::vector<std::size_t>(big.shape()));
    const std::size_t n = big.size();
    const std::size_t cols = big.rank() == 2 ? big.cols() : big.size();
    for (std::size_t i = 0; i < n; ++i) {
        T x = T(0), y = T(0);
        switch (mode) {
            case detail::Broadcast::kNone: x = av[i]; y = bv[i]; break;
            case detail::Broadcast::kRowVec: x = av[i]; y = bv[i % cols]; break;
            case detail::Broadcast::kScalarRhs: x = av[i]; y = bv[0]; break;
            case detail::Broadcast::kScalarLhs: x = av[0]; y = bv[i]; break;
        }
        out[i] = fwd(x, y);
    }

    const bool needs = tp.needs_grad(a.id) || tp.needs_grad(b.id);
    const int aid = a.id, bid = b.id;
    return tp.emplace(std::move(out), op, needs,
                      [aid, bid, mode, cols, bwd_a, bwd_b](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& av2 = t.value(Var<T>{&t, aid});
        const Tensor<T>& bv2 = t.value(Var<T>{&t, bid});
        const std::size_t n2 = g.size();
        if (t.needs_grad(aid)) {
            Tensor<T>& ga = t.grad_ref(aid);
            for (std::size_t i = 0; i < n2; ++i) {
                T x = T(0), y = T(0);
                switch (mode) {
                    case detail::Broadcast::kNone: x = av2[i]; y = bv2[i]; break;
                    case detail::Broadcast::kRowVec: x = av2[i]; y = bv2[i % cols]; break;
                    case detail::Broadcast::kScalarRhs: x = av2[i]; y = bv2[0]; break;
                    case detail::Broadcast::kScalarLhs: x = av2[0]; y = bv2[i]; break;
                }
                ga[mode == detail::Broadcast::kScalarLhs ? 0 : i] += bwd_a(x, y) * g[i];
            }
        }
        if (t.needs_grad(bid)) {
            Tensor<T>& gb = t.grad_ref(bid);
            for (std::size_t i = 0; i < n2; ++i) {
                T x = T(0), y = T(0);
                std::size_t bslot = i;
                switch (mode) {
                    case detail::Broadcast::kNone: x = av2[i]; y = bv2[i]; break;
                    case detail::Broadcast::kRowVec: x = av2[i]; y = bv2[i % cols]; bslot = i % cols; break;
                    case detail::Broadcast::kScalarRhs: x = av2[i]; y = bv2[0]; bslot = 0; break;
                    case detail::Broadcast::kScalarLhs: x = av2[0]; y = bv2[i]; break;
                }
                gb[bslot] += bwd_b(x, y) * g[i];
            }
        }
    });
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    return detail::binary_op<T>("add", a, b, true,
                                [](T x, T y) { return x + y; },
                                [](T, T) { return T(1); },
                                [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    return detail::binary_op<T>("sub", a, b, true,
                                [](T x, T y) { return x - y; },
                                [](T, T) { return T(1); },
                                [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    return detail::binary_op<T>("multiply", a, b, false,
                                [](T x, T y) { return x * y; },
                                [](T, T y) { return y; },
                                [](T x, T) { return x; });
}

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

/// Multiply by a plain (non-trainable) scalar.
template <typename T>
Var<T> scale(Var<T> a, T c) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    const int aid = a.id;
    return tp.emplace(std::move(out), "scale", tp.needs_grad(aid),
                      [aid, c](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(aid)) return;
        Tensor<T>& ga = t.grad_ref(aid);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

// ---------------------------------------------------------------------------
// Matrix product. Accepts (m x k)(k x n), and vectors as implicit row (lhs)
// or column (rhs); a vector-vector product is a dot product (scalar output).
// ---------------------------------------------------------------------------
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    detail::check_same_tape("matmul", a, b);
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.rank() < 1 || av.rank() > 2 || bv.rank() < 1 || bv.rank() > 2) {
        detail::shape_fail("matmul", av.shape_string(), bv.shape_string());
    }
    const std::size_t m = av.rank() == 2 ? av.dim(0) : 1;
    const std::size_t k = av.rank() == 2 ? av.dim(1) : av.dim(0);
    const std::size_t kb = bv.rank() == 2 ? bv.dim(0) : bv.dim(0);
    const std::size_t n = bv.rank() == 2 ? bv.dim(1) : 1;
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions differ: " + av.shape_string() + " vs " +
                         bv.shape_string());
    }
    std::vector<std::size_t> out_shape;
    if (av.rank() == 2 && bv.rank() == 2) out_shape = {m, n};
    else if (av.rank() == 1 && bv.rank() == 2) out_shape = {n};
    else if (av.rank() == 2 && bv.rank() == 1) out_shape = {m};
    // vector . vector -> scalar, shape {}

    Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
    detail::mm_acc(av.data(), m, k, bv.data(), n, out.data());

    const bool needs = tp.needs_grad(a.id) || tp.needs_grad(b.id);
    const int aid = a.id, bid = b.id;
    return tp.emplace(std::move(out), "matmul", needs,
                      [aid, bid, m, k, n](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& av2 = t.value(Var<T>{&t, aid});
        const Tensor<T>& bv2 = t.value(Var<T>{&t, bid});
        if (t.needs_grad(aid)) {
            detail::mm_bt_acc(g.data(), m, n, bv2.data(), k, t.grad_ref(aid).data());
        }
        if (t.needs_grad(bid)) {
            detail::mm_at_acc(av2.data(), m, k, g.data(), n, t.grad_ref(bid).data());
        }
    });
}

template <typename T>
Var<T> dot(Var<T> a, Var<T> b) { return matmul(a, b); }

template <typename T>
Var<T> transpose(Var<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.value();
    if (av.rank() != 2) {
        throw ShapeError("transpose: expected a matrix, got " + av.shape_string());
    }
    const std::size_t r = av.dim(0), c = av.dim(1);
    Tensor<T> out = Tensor<T>::zeros({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
    const int aid = a.id;
    return tp.emplace(std::move(out), "transpose", tp.needs_grad(aid),
                      [aid, r, c](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(aid)) return;
        Tensor<T>& ga = t.grad_ref(aid);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Var<T> unary_op(const char* op, Var<T> a, Fwd fwd, Bwd bwd_from_in_out) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.value();
    Tensor<T> out = Tensor<T>::zeros(std::vector<std::size_t>(av.shape()));
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    const int aid = a.id;
    return tp.emplace(std::move(out), op, tp.needs_grad(aid),
                      [aid, bwd_from_in_out](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(aid)) return;
        const Tensor<T>& in = t.value(Var<T>{&t, aid});
        Tensor<T>& ga = t.grad_ref(aid);
        for (std::size_t i = 0; i < g.size(); ++i) {
            // recompute the forward value cheaply where the rule needs it
            ga[i] += bwd_from_in_out(in[i]) * g[i];
        }
    });
}

}  // namespace detail

template <typename T>
Var<T> sigmoid(Var<T> a) {
    auto f = [](T x) { return T(1) / (T(1) + std::exp(-x)); };
    return detail::unary_op<T>("sigmoid", a, f, [f](T x) {
        const T s = f(x);
        return s * (T(1) - s);
    });
}

template <typename T>
Var<T> tanh(Var<T> a) {
    return detail::unary_op<T>("tanh", a, [](T x) { return std::tanh(x); }, [](T x) {
        const T th = std::tanh(x);
        return T(1) - th * th;
    });
}

template <typename T>
Var<T> relu(Var<T> a) {
    return detail::unary_op<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                       [](T x) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> cos(Var<T> a) {
    return detail::unary_op<T>("cos", a, [](T x) { return std::cos(x); },
                       [](T x) { return -std::sin(x); });
}

// ---------------------------------------------------------------------------
// Shape ops: concatenation, stacking, gathering, slicing.
// ---------------------------------------------------------------------------

/// Concatenate scalars/vectors into one vector (inputs are flattened).
template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Tape<T>& tp = *parts[0].tape;
    std::size_t total = 0;
    bool needs = false;
    for (const Var<T>& p : parts) {
        detail::check_same_tape("concat", parts[0], p);
        if (p.value().rank() > 1) {
            throw ShapeError("concat: expected scalars or vectors, got " +
                             p.value().shape_string());
        }
        total += p.size();
        needs = needs || tp.needs_grad(p.id);
    }
    Tensor<T> out = Tensor<T>::zeros({total});
    std::size_t off = 0;
    std::vector<std::pair<int, std::size_t>> layout;  // (id, length)
    layout.reserve(parts.size());
    for (const Var<T>& p : parts) {
        const Tensor<T>& pv = p.value();
        for (std::size_t i = 0; i < pv.size(); ++i) out[off + i] = pv[i];
        layout.emplace_back(p.id, pv.size());
        off += pv.size();
    }
    return tp.emplace(std::move(out), "concat", needs,
                      [layout = std::move(layout)](Tape<T>& t, const Tensor<T>& g) {
        std::size_t off2 = 0;
        for (auto [pid, len] : layout) {
            if (t.needs_grad(pid)) {
                Tensor<T>& gp = t.grad_ref(pid);
                for (std::size_t i = 0; i < len; ++i) gp[i] += g[off2 + i];
            }
            off2 += len;
        }
    });
}

template <typename T>
Var<T> concat(Var<T> a, Var<T> b) {
    const Var<T> parts[] = {a, b};
    return concat(std::span<const Var<T>>(parts));
}

/// Stack equal-length vectors as the rows of a matrix.
template <typename T>
Var<T> stack_rows(std::span<const Var<T>> rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no inputs");
    Tape<T>& tp = *rows[0].tape;
    const std::size_t w = rows[0].size();
    bool needs = false;
    for (const Var<T>& r : rows) {
        detail::check_same_tape("stack_rows", rows[0], r);
        if (r.value().rank() != 1 || r.size() != w) {
            detail::shape_fail("stack_rows", rows[0].value().shape_string(),
                               r.value().shape_string());
        }
        needs = needs || tp.needs_grad(r.id);
    }
    Tensor<T> out = Tensor<T>::zeros({rows.size(), w});
    std::vector<int> ids(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Tensor<T>& rv = rows[i].value();
        for (std::size_t j = 0; j < w; ++j) out.at(i, j) = rv[j];
        ids[i] = rows[i].id;
    }
    return tp.emplace(std::move(out), "stack_rows", needs,
                      [ids = std::move(ids), w](Tape<T>& t, const Tensor<T>& g) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!t.needs_grad(ids[i])) continue;
            Tensor<T>& gr = t.grad_ref(ids[i]);
            for (std::size_t j = 0; j < w; ++j) gr[j] += g[i * w + j];
        }
    });
}

/// Vertically concatenate matrices with equal column counts.
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Tape<T>& tp = *parts[0].tape;
    const std::size_t w = parts[0].value().cols();
    std::size_t total_rows = 0;
    bool needs = false;
    for (const Var<T>& p : parts) {
        detail::check_same_tape("concat_rows", parts[0], p);
        const Tensor<T>& pv = p.value();
        if (pv.rank() != 2 || pv.cols() != w) {
            detail::shape_fail("concat_rows", parts[0].value().shape_string(),
                               pv.shape_string());
        }
        total_rows += pv.dim(0);
        needs = needs || tp.needs_grad(p.id);
    }
    Tensor<T> out = Tensor<T>::zeros({total_rows, w});
    std::vector<std::pair<int, std::size_t>> layout;
    std::size_t roff = 0;
    for (const Var<T>& p : parts) {
        const Tensor<T>& pv = p.value();
        for (std::size_t i = 0; i < pv.size(); ++i) out[roff * w + i] = pv[i];
        layout.emplace_back(p.id, pv.dim(0));
        roff += pv.dim(0);
    }
    return tp.emplace(std::move(out), "concat_rows", needs,
                      [layout = std::move(layout), w](Tape<T>& t, const Tensor<T>& g) {
        std::size_t roff2 = 0;
        for (auto [pid, nrows] : layout) {
            if (t.needs_grad(pid)) {
                Tensor<T>& gp = t.grad_ref(pid);
                for (std::size_t i = 0; i < nrows * w; ++i) gp[i] += g[roff2 * w + i];
            }
            roff2 += nrows;
        }
    });
}

template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
    const Var<T> parts[] = {a, b};
    return concat_rows(std::span<const Var<T>>(parts));
}

/// Horizontally concatenate two matrices with equal row counts.
template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
    detail::check_same_tape("concat_cols", a, b);
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0)) {
        detail::shape_fail("concat_cols", av.shape_string(), bv.shape_string());
    }
    const std::size_t r = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
    Tensor<T> out = Tensor<T>::zeros({r, ca + cb});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < ca; ++j) out.at(i, j) = av.at(i, j);
        for (std::size_t j = 0; j < cb; ++j) out.at(i, ca + j) = bv.at(i, j);
    }
    const bool needs = tp.needs_grad(a.id) || tp.needs_grad(b.id);
    const int aid = a.id, bid = b.id;
    return tp.emplace(std::move(out), "concat_cols", needs,
                      [aid, bid, r, ca, cb](Tape<T>& t, const Tensor<T>& g) {
        if (t.needs_grad(aid)) {
            Tensor<T>& ga = t.grad_ref(aid);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
        }
        if (t.needs_grad(bid)) {
            Tensor<T>& gb = t.grad_ref(bid);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < cb; ++j)
                    gb[i * cb + j] += g[i * (ca + cb) + ca + j];
        }
    });
}

/// Select matrix rows by index (repeats allowed); gradient scatter-adds.
template <typename T>
Var<T> gather_rows(Var<T> m, std::vector<int> idx) {
    Tape<T>& tp = *m.tape;
    const Tensor<T>& mv = m.value();
    if (mv.rank() != 2) throw ShapeError("gather_rows: expected a matrix, got " + mv.shape_string());
    const std::size_t w = mv.dim(1);
    Tensor<T> out = Tensor<T>::zeros({idx.size(), w});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const int r = idx[i];
        if (r < 0 || static_cast<std::size_t>(r) >= mv.dim(0)) {
            throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " +
                             mv.shape_string());
        }
        for (std::size_t j = 0; j < w; ++j) out.at(i, j) = mv.at(static_cast<std::size_t>(r), j);
    }
    const int mid = m.id;
    return tp.emplace(std::move(out), "gather_rows", tp.needs_grad(mid),
                      [mid, idx = std::move(idx), w](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(mid)) return;
        Tensor<T>& gm = t.grad_ref(mid);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < w; ++j)
                gm[static_cast<std::size_t>(idx[i]) * w + j] += g[i * w + j];
    });
}

/// Select vector entries by index.
template <typename T>
Var<T> gather(Var<T> v, std::vector<int> idx) {
    Tape<T>& tp = *v.tape;
    const Tensor<T>& vv = v.value();
    if (vv.rank() != 1) throw ShapeError("gather: expected a vector, got " + vv.shape_string());
    Tensor<T> out = Tensor<T>::zeros({idx.size()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const int r = idx[i];
        if (r < 0 || static_cast<std::size_t>(r) >= vv.size()) {
            throw ShapeError("gather: index " + std::to_string(r) + " out of range for " +
                             vv.shape_string());
        }
        out[i] = vv[static_cast<std::size_t>(r)];
    }
    const int vid = v.id;
    return tp.emplace(std::move(out), "gather", tp.needs_grad(vid),
                      [vid, idx = std::move(idx)](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(vid)) return;
        Tensor<T>& gv = t.grad_ref(vid);
        for (std::size_t i = 0; i < idx.size(); ++i) gv[static_cast<std::size_t>(idx[i])] += g[i];
    });
}

/// Contiguous vector slice [start, start+len).
template <typename T>
Var<T> slice(Var<T> v, std::size_t start, std::size_t len) {
    Tape<T>& tp = *v.tape;
    const Tensor<T>& vv = v.value();
    if (vv.rank() != 1 || start + len > vv.size()) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for " +
                         vv.shape_string());
    }
    Tensor<T> out = Tensor<T>::zeros({len});
    for (std::size_t i = 0; i < len; ++i) out[i] = vv[start + i];
    const int vid = v.id;
    return tp.emplace(std::move(out), "slice", tp.needs_grad(vid),
                      [vid, start, len](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(vid)) return;
        Tensor<T>& gv = t.grad_ref(vid);
        for (std::size_t i = 0; i < len; ++i) gv[start + i] += g[i];
    });
}

template <typename T>
Var<T> slice_rows(Var<T> m, std::size_t start, std::size_t count) {
    Tape<T>& tp = *m.tape;
    const Tensor<T>& mv = m.value();
    if (mv.rank() != 2 || start + count > mv.dim(0)) {
        throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of bounds for " +
                         mv.shape_string());
    }
    const std::size_t w = mv.dim(1);
    Tensor<T> out = Tensor<T>::zeros({count, w});
    for (std::size_t i = 0; i < count * w; ++i) out[i] = mv[start * w + i];
    const int mid = m.id;
    return tp.emplace(std::move(out), "slice_rows", tp.needs_grad(mid),
                      [mid, start, count, w](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(mid)) return;
        Tensor<T>& gm = t.grad_ref(mid);
        for (std::size_t i = 0; i < count * w; ++i) gm[start * w + i] += g[i];
    });
}

template <typename T>
Var<T> slice_cols(Var<T> m, std::size_t start, std::size_t count) {
    Tape<T>& tp = *m.tape;
    const Tensor<T>& mv = m.value();
    if (mv.rank() != 2 || start + count > mv.dim(1)) {
        throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of bounds for " +
                         mv.shape_string());
    }
    const std::size_t r = mv.dim(0), w = mv.dim(1);
    Tensor<T> out = Tensor<T>::zeros({r, count});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) out.at(i, j) = mv.at(i, start + j);
    const int mid = m.id;
    return tp.emplace(std::move(out), "slice_cols", tp.needs_grad(mid),
                      [mid, start, count, r, w](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(mid)) return;
        Tensor<T>& gm = t.grad_ref(mid);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < count; ++j) gm[i * w + start + j] += g[i * count + j];
    });
}

/// Single matrix row as a vector.
template <typename T>
Var<T> row(Var<T> m, std::size_t i) {
    Tape<T>& tp = *m.tape;
    const Tensor<T>& mv = m.value();
    if (mv.rank() != 2 || i >= mv.dim(0)) {
        throw ShapeError("row: index " + std::to_string(i) + " out of bounds for " +
                         mv.shape_string());
    }
    const std::size_t w = mv.dim(1);
    Tensor<T> out = Tensor<T>::zeros({w});
    for (std::size_t j = 0; j < w; ++j) out[j] = mv.at(i, j);
    const int mid = m.id;
    return tp.emplace(std::move(out), "row", tp.needs_grad(mid),
                      [mid, i, w](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(mid)) return;
        Tensor<T>& gm = t.grad_ref(mid);
        for (std::size_t j = 0; j < w; ++j) gm[i * w + j] += g[j];
    });
}

template <typename T>
Var<T> reshape(Var<T> a, std::vector<std::size_t> shape) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.value();
    if (Tensor<T>::element_count(shape) != av.size()) {
        throw ShapeError("reshape: cannot view " + av.shape_string() + " as " +
                         Tensor<T>::shape_string(shape));
    }
    Tensor<T> out(std::move(shape), std::vector<T>(av.values()));
    const int aid = a.id;
    return tp.emplace(std::move(out), "reshape", tp.needs_grad(aid),
                      [aid](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(aid)) return;
        Tensor<T>& ga = t.grad_ref(aid);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.value();
    T acc = T(0);
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i];
    const int aid = a.id;
    return tp.emplace(Tensor<T>::scalar(acc), "sum", tp.needs_grad(aid),
                      [aid](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(aid)) return;
        Tensor<T>& ga = t.grad_ref(aid);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
    });
}

template <typename T>
Var<T> mean(Var<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.value();
    if (av.size() == 0) throw ShapeError("mean: empty tensor");
    T acc = T(0);
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i];
    const T inv = T(1) / T(av.size());
    const int aid = a.id;
    return tp.emplace(Tensor<T>::scalar(acc * inv), "mean", tp.needs_grad(aid),
                      [aid, inv](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(aid)) return;
        Tensor<T>& ga = t.grad_ref(aid);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += inv * g[0];
    });
}

// ---------------------------------------------------------------------------
// Normalizers: softmax (vector, or row-wise on a matrix) and sparsemax.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> softmax(Var<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.value();
    Tensor<T> out = Tensor<T>::zeros(std::vector<std::size_t>(av.shape()));
    if (av.rank() == 1) {
        out = gtea::numerics::softmax(av);
    } else if (av.rank() == 2) {
        const std::size_t r = av.dim(0), c = av.dim(1);
        for (std::size_t i = 0; i < r; ++i) {
            std::vector<T> rowv(av.data() + i * c, av.data() + (i + 1) * c);
            Tensor<T> p = gtea::numerics::softmax(Tensor<T>::vector(std::move(rowv)));
            for (std::size_t j = 0; j < c; ++j) out.at(i, j) = p[j];
        }
    } else {
        throw ShapeError("softmax: expected vector or matrix, got " + av.shape_string());
    }
    const int aid = a.id;
    return tp.emplace(std::move(out), "softmax", tp.needs_grad(aid),
                      [aid](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(aid)) return;
        // recompute the row softmax from the recorded input
        const Tensor<T>& in = t.value(Var<T>{&t, aid});
        Tensor<T>& ga = t.grad_ref(aid);
        const std::size_t c = in.rank() == 2 ? in.dim(1) : in.size();
        const std::size_t r = in.size() / c;
        for (std::size_t i = 0; i < r; ++i) {
            std::vector<T> rowv(in.data() + i * c, in.data() + (i + 1) * c);
            Tensor<T> y = gtea::numerics::softmax(Tensor<T>::vector(std::move(rowv)));
            std::vector<T> gv(g.data() + i * c, g.data() + (i + 1) * c);
            Tensor<T> gi = softmax_backward(y, Tensor<T>::vector(std::move(gv)));
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gi[j];
        }
    });
}

template <typename T>
Var<T> sparsemax(Var<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& av = a.value();
    Tensor<T> out = gtea::numerics::sparsemax(av);
    const int aid = a.id;
    return tp.emplace(std::move(out), "sparsemax", tp.needs_grad(aid),
                      [aid](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(aid)) return;
        Tensor<T> p = gtea::numerics::sparsemax(t.value(Var<T>{&t, aid}));
        Tensor<T> gi = sparsemax_backward(p, g);
        detail::accumulate(t.grad_ref(aid), gi);
    });
}

/// Row-wise layer normalization with learnable gain and bias:
/// y = gain .* (x - mu) / sqrt(var + eps) + bias, per row.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
    detail::check_same_tape("layer_norm", x, gain);
    detail::check_same_tape("layer_norm", x, bias);
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    const std::size_t c = xv.rank() == 2 ? xv.dim(1) : xv.size();
    const std::size_t r = xv.size() / c;
    if (gain.size() != c || bias.size() != c || xv.rank() > 2 || xv.rank() < 1) {
        throw ShapeError("layer_norm: incompatible shapes " + xv.shape_string() + ", " +
                         gain.value().shape_string() + ", " + bias.value().shape_string());
    }
    const Tensor<T>& gv = gain.value();
    const Tensor<T>& bv = bias.value();
    Tensor<T> out = Tensor<T>::zeros(std::vector<std::size_t>(xv.shape()));
    for (std::size_t i = 0; i < r; ++i) {
        T mu = T(0);
        for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
        mu /= T(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            const T d = xv[i * c + j] - mu;
            var += d * d;
        }
        var /= T(c);
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = gv[j] * (xv[i * c + j] - mu) * inv + bv[j];
        }
    }
    const bool needs = tp.needs_grad(x.id) || tp.needs_grad(gain.id) || tp.needs_grad(bias.id);
    const int xid = x.id, gid = gain.id, bid = bias.id;
    return tp.emplace(std::move(out), "layer_norm", needs,
                      [xid, gid, bid, r, c, eps](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv2 = t.value(Var<T>{&t, xid});
        const Tensor<T>& gv2 = t.value(Var<T>{&t, gid});
        for (std::size_t i = 0; i < r; ++i) {
            T mu = T(0);
            for (std::size_t j = 0; j < c; ++j) mu += xv2[i * c + j];
            mu /= T(c);
            T var = T(0);
            for (std::size_t j = 0; j < c; ++j) {
                const T d = xv2[i * c + j] - mu;
                var += d * d;
            }
            var /= T(c);
            const T inv = T(1) / std::sqrt(var + eps);
            // xhat_j = (x_j - mu) * inv ; ghat_j = g_j * gain_j
            T ghat_mean = T(0), ghat_xhat_mean = T(0);
            std::vector<T> xhat(c), ghat(c);
            for (std::size_t j = 0; j < c; ++j) {
                xhat[j] = (xv2[i * c + j] - mu) * inv;
                ghat[j] = g[i * c + j] * gv2[j];
                ghat_mean += ghat[j];
                ghat_xhat_mean += ghat[j] * xhat[j];
            }
            ghat_mean /= T(c);
            ghat_xhat_mean /= T(c);
            if (t.needs_grad(xid)) {
                Tensor<T>& gx = t.grad_ref(xid);
                for (std::size_t j = 0; j < c; ++j) {
                    gx[i * c + j] += inv * (ghat[j] - ghat_mean - xhat[j] * ghat_xhat_mean);
                }
            }
            if (t.needs_grad(gid)) {
                Tensor<T>& gg = t.grad_ref(gid);
                for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[j];
            }
            if (t.needs_grad(bid)) {
                Tensor<T>& gb = t.grad_ref(bid);
                for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
            }
        }
    });
}

/// Mean negative log-likelihood of integer labels under a stable
/// log-softmax of the logit rows.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::vector<int> labels) {
    Tape<T>& tp = *logits.tape;
    const Tensor<T>& lv = logits.value();
    if (lv.rank() != 2) {
        throw ShapeError("cross_entropy: expected a logits matrix, got " + lv.shape_string());
    }
    const std::size_t n = lv.dim(0), c = lv.dim(1);
    if (labels.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(n) + " logit rows vs " +
                         std::to_string(labels.size()) + " labels");
    }
    if (n == 0) throw ShapeError("cross_entropy: no labeled rows");
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw ShapeError("cross_entropy: label " + std::to_string(y) +
                             " outside [0, " + std::to_string(c) + ")");
        }
        T zmax = lv.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, lv.at(i, j));
        T lse = T(0);
        for (std::size_t j = 0; j < c; ++j) lse += std::exp(lv.at(i, j) - zmax);
        total += zmax + std::log(lse) - lv.at(i, static_cast<std::size_t>(y));
    }
    const int lid = logits.id;
    return tp.emplace(Tensor<T>::scalar(total / T(n)), "cross_entropy", tp.needs_grad(lid),
                      [lid, labels = std::move(labels), n, c](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(lid)) return;
        const Tensor<T>& lv2 = t.value(Var<T>{&t, lid});
        Tensor<T>& gl = t.grad_ref(lid);
        const T s = g[0] / T(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<T> rowv(lv2.data() + i * c, lv2.data() + (i + 1) * c);
            Tensor<T> p = gtea::numerics::softmax(Tensor<T>::vector(std::move(rowv)));
            for (std::size_t j = 0; j < c; ++j) {
                T v = p[j];
                if (j == static_cast<std::size_t>(labels[i])) v -= T(1);
                gl[i * c + j] += s * v;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Gradient verification.
// ---------------------------------------------------------------------------

/// Central finite-difference check of a scalar-valued tape function
/// f(tape, x) at `point`. Returns max_i |analytic - numeric| /
/// max(1, |analytic|, |numeric|).
template <typename F>
double gradient_check(F&& f, const Tensor<double>& point, double h = 1e-6) {
    Tensor<double> analytic;
    {
        Tape<double> tape;
        Var<double> x = tape.param(point);
        Var<double> y = f(tape, x);
        if (y.value().size() != 1) {
            throw ShapeError("gradient_check: f must return a scalar, got " +
                             y.value().shape_string());
        }
        tape.backward(y);
        analytic = tape.grad(x);
    }
    auto eval = [&](const Tensor<double>& p) {
        Tape<double> tape;
        Var<double> x = tape.constant(p);
        double v = f(tape, x).value().item();
        if (!std::isfinite(v)) {
            throw NumericError("gradient_check: non-finite evaluation of f");
        }
        return v;
    };
    double worst = 0.0;
    Tensor<double> perturbed = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        perturbed[i] = point[i] + h;
        const double up = eval(perturbed);
        perturbed[i] = point[i] - h;
        const double down = eval(perturbed);
        perturbed[i] = point[i];
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace gtea::numerics
