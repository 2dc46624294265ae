#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "gtea/graph.hpp"
#include "gtea/tape.hpp"

namespace gtea::encoders {

using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

enum class SeqModelKind { kLstm, kTransformer };

// ---------------------------------------------------------------------------
// Parameter binding. Model parameters live as plain tensors; a forward pass
// binds them onto a tape either as fresh trainable leaves or as slices of a
// single flat vector (which lets finite-difference checks treat a whole
// model as one function of one input). Binding order must match the
// visit_params order of each struct.
// ---------------------------------------------------------------------------
template <typename T>
class Binder {
public:
    explicit Binder(Tape<T>& tape) : tape_(tape) {}
    Binder(Tape<T>& tape, Var<T> flat) : tape_(tape), flat_(flat), from_flat_(true) {}

    Var<T> operator()(const Tensor<T>& t) {
        if (!from_flat_) {
            Var<T> v = tape_.param(t);
            bound_.push_back(v);
            return v;
        }
        Var<T> piece = numerics::slice(flat_, offset_, t.size());
        offset_ += t.size();
        if (t.rank() == 1) {
            bound_.push_back(piece);
            return piece;
        }
        Var<T> shaped = numerics::reshape(piece, std::vector<std::size_t>(t.shape()));
        bound_.push_back(shaped);
        return shaped;
    }

    std::size_t consumed() const { return offset_; }
    Tape<T>& tape() { return tape_; }

    /// Vars in binding order; lines up with visit_params enumeration.
    const std::vector<Var<T>>& bound() const { return bound_; }

private:
    Tape<T>& tape_;
    Var<T> flat_{};
    std::size_t offset_ = 0;
    bool from_flat_ = false;
    std::vector<Var<T>> bound_;
};

template <typename T>
Tensor<T> glorot_uniform(std::size_t fan_in, std::size_t fan_out,
                         std::vector<std::size_t> shape, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
    return t;
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

template <typename T>
struct LstmLayerParams {
    Tensor<T> w_i, w_f, w_c, w_o;  // (input x hidden)
    Tensor<T> u_i, u_f, u_c, u_o;  // (hidden x hidden)
    Tensor<T> b_i, b_f, b_c, b_o;  // (hidden)
};

/// One parameter set shared by every node pair. Stacked layers feed each
/// step's hidden state upward.
template <typename T>
struct LstmParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    std::vector<LstmLayerParams<T>> layers;

    static LstmParams glorot(std::size_t input_dim, std::size_t hidden_dim,
                             std::size_t num_layers, Rng& rng) {
        LstmParams p;
        p.input_dim = input_dim;
        p.hidden_dim = hidden_dim;
        for (std::size_t l = 0; l < num_layers; ++l) {
            const std::size_t in = l == 0 ? input_dim : hidden_dim;
            LstmLayerParams<T> lp;
            for (Tensor<T>* w : {&lp.w_i, &lp.w_f, &lp.w_c, &lp.w_o}) {
                *w = glorot_uniform<T>(in, hidden_dim, {in, hidden_dim}, rng);
            }
            for (Tensor<T>* u : {&lp.u_i, &lp.u_f, &lp.u_c, &lp.u_o}) {
                *u = glorot_uniform<T>(hidden_dim, hidden_dim, {hidden_dim, hidden_dim}, rng);
            }
            lp.b_i = Tensor<T>::zeros({hidden_dim});
            lp.b_f = Tensor<T>::full({hidden_dim}, T(1));  // open forget gates at init
            lp.b_c = Tensor<T>::zeros({hidden_dim});
            lp.b_o = Tensor<T>::zeros({hidden_dim});
            p.layers.push_back(std::move(lp));
        }
        return p;
    }
};

namespace detail {

// Enumerates (name, tensor) in a fixed order; bind() below must stay in sync.
template <typename P, typename F>
void visit_lstm(P& params, const std::string& prefix, F&& fn) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        const std::string p = prefix + ".layer" + std::to_string(l);
        fn(p + ".w_i", layer.w_i);
        fn(p + ".w_f", layer.w_f);
        fn(p + ".w_c", layer.w_c);
        fn(p + ".w_o", layer.w_o);
        fn(p + ".u_i", layer.u_i);
        fn(p + ".u_f", layer.u_f);
        fn(p + ".u_c", layer.u_c);
        fn(p + ".u_o", layer.u_o);
        fn(p + ".b_i", layer.b_i);
        fn(p + ".b_f", layer.b_f);
        fn(p + ".b_c", layer.b_c);
        fn(p + ".b_o", layer.b_o);
    }
}

}  // namespace detail

template <typename T, typename F>
void visit_params(LstmParams<T>& p, const std::string& prefix, F&& fn) {
    detail::visit_lstm(p, prefix, fn);
}
template <typename T, typename F>
void visit_params(const LstmParams<T>& p, const std::string& prefix, F&& fn) {
    detail::visit_lstm(p, prefix, fn);
}

template <typename T>
struct LstmLayerVars {
    Var<T> w_i, w_f, w_c, w_o, u_i, u_f, u_c, u_o, b_i, b_f, b_c, b_o;
};

template <typename T>
struct LstmVars {
    std::vector<LstmLayerVars<T>> layers;
    std::size_t hidden_dim = 0;
};

// keep field order in sync with visit_params
template <typename T>
LstmVars<T> bind(Binder<T>& b, const LstmParams<T>& p) {
    LstmVars<T> v;
    v.hidden_dim = p.hidden_dim;
    for (const LstmLayerParams<T>& lp : p.layers) {
        LstmLayerVars<T> lv;
        lv.w_i = b(lp.w_i);
        lv.w_f = b(lp.w_f);
        lv.w_c = b(lp.w_c);
        lv.w_o = b(lp.w_o);
        lv.u_i = b(lp.u_i);
        lv.u_f = b(lp.u_f);
        lv.u_c = b(lp.u_c);
        lv.u_o = b(lp.u_o);
        lv.b_i = b(lp.b_i);
        lv.b_f = b(lp.b_f);
        lv.b_c = b(lp.b_c);
        lv.b_o = b(lp.b_o);
        v.layers.push_back(lv);
    }
    return v;
}

template <typename T>
struct LstmStep {
    Var<T> input_gate, forget_gate, candidate, cell, output_gate, hidden;
};

/// One recurrence step. `x` may be a single event vector or a matrix of
/// active rows; `h_prev`/`c_prev` must match its leading dimension.
template <typename T>
LstmStep<T> lstm_step(Var<T> x, Var<T> h_prev, Var<T> c_prev, const LstmLayerVars<T>& p) {
    using namespace numerics;
    LstmStep<T> s;
    s.input_gate = sigmoid(add(add(matmul(x, p.w_i), matmul(h_prev, p.u_i)), p.b_i));
    s.forget_gate = sigmoid(add(add(matmul(x, p.w_f), matmul(h_prev, p.u_f)), p.b_f));
    s.candidate = tanh(add(add(matmul(x, p.w_c), matmul(h_prev, p.u_c)), p.b_c));
    s.cell = add(mul(s.forget_gate, c_prev), mul(s.input_gate, s.candidate));
    s.output_gate = sigmoid(add(add(matmul(x, p.w_o), matmul(h_prev, p.u_o)), p.b_o));
    s.hidden = mul(s.output_gate, tanh(s.cell));
    return s;
}

/// Edge embedding of one sequence: the last hidden state of the (stacked)
/// LSTM run over the event vectors.
template <typename T>
Var<T> lstm_encode(Tape<T>& tape, std::span<const Var<T>> inputs, const LstmVars<T>& vars) {
    using namespace numerics;
    if (inputs.empty()) throw ShapeError("lstm_encode: empty sequence");
    std::vector<Var<T>> xs(inputs.begin(), inputs.end());
    Var<T> last{};
    for (const LstmLayerVars<T>& layer : vars.layers) {
        Var<T> h = tape.constant(Tensor<T>::zeros({vars.hidden_dim}));
        Var<T> c = tape.constant(Tensor<T>::zeros({vars.hidden_dim}));
        for (Var<T>& x : xs) {
            LstmStep<T> s = lstm_step(x, h, c, layer);
            h = s.hidden;
            c = s.cell;
            x = s.hidden;  // becomes next layer's input
        }
        last = h;
    }
    return last;
}

/// Packed-batch LSTM over sequences sorted by non-increasing length.
/// step_inputs[k] holds the step-k event vectors of the `active[k]` longest
/// sequences as rows; the result row i is the last hidden state of
/// sequence i. Row-local arithmetic matches lstm_encode bit for bit.
template <typename T>
Var<T> lstm_encode_packed(Tape<T>& tape, std::span<const Var<T>> step_inputs,
                          std::span<const std::size_t> active, const LstmVars<T>& vars) {
    using namespace numerics;
    if (step_inputs.empty()) throw ShapeError("lstm_encode_packed: empty batch");
    const std::size_t steps = step_inputs.size();
    std::vector<Var<T>> xs(step_inputs.begin(), step_inputs.end());
    Var<T> packed{};
    for (const LstmLayerVars<T>& layer : vars.layers) {
        Var<T> h = tape.constant(Tensor<T>::zeros({active[0], vars.hidden_dim}));
        Var<T> c = tape.constant(Tensor<T>::zeros({active[0], vars.hidden_dim}));
        std::vector<Var<T>> finished;  // chunks of rows whose sequence ended
        std::vector<Var<T>> hs(steps);
        for (std::size_t k = 0; k < steps; ++k) {
            const std::size_t n_k = active[k];
            if (h.value().dim(0) > n_k) {
                h = slice_rows(h, 0, n_k);
                c = slice_rows(c, 0, n_k);
            }
            LstmStep<T> s = lstm_step(xs[k], h, c, layer);
            h = s.hidden;
            c = s.cell;
            hs[k] = s.hidden;
            const std::size_t n_next = k + 1 < steps ? active[k + 1] : 0;
            if (n_next < n_k && k + 1 < steps) {
                finished.push_back(slice_rows(h, n_next, n_k - n_next));
            }
        }
        std::vector<Var<T>> parts;
        parts.push_back(h);  // rows that ran the full length
        for (auto it = finished.rbegin(); it != finished.rend(); ++it) parts.push_back(*it);
        packed = parts.size() == 1 ? parts[0] : concat_rows(std::span<const Var<T>>(parts));
        xs = hs;  // stacked layers consume every step's hidden state
    }
    return packed;
}

// ---------------------------------------------------------------------------
// Time2Vec
// ---------------------------------------------------------------------------

/// Learnable time encoding of width l+1: index 0 is linear in t, indices
/// 1..l are cos(omega_i t + phi_i).
template <typename T>
struct T2vParams {
    Tensor<T> omega;  // (l+1)
    Tensor<T> phi;    // (l+1)

    std::size_t width() const { return omega.size(); }

    /// Periodic frequencies cover 1..64 cycles per normalized time span
    /// (log-uniform); the linear term starts as identity.
    static T2vParams init(std::size_t periodic_terms, Rng& rng) {
        T2vParams p;
        const std::size_t w = periodic_terms + 1;
        p.omega = Tensor<T>::zeros({w});
        p.phi = Tensor<T>::zeros({w});
        p.omega[0] = T(1);
        std::uniform_real_distribution<double> logu(std::log(1.0), std::log(64.0));
        std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
        for (std::size_t i = 1; i < w; ++i) {
            p.omega[i] = static_cast<T>(2.0 * std::numbers::pi * std::exp(logu(rng)));
            p.phi[i] = static_cast<T>(phase(rng));
        }
        return p;
    }
};

template <typename T, typename F>
void visit_params(T2vParams<T>& p, const std::string& prefix, F&& fn) {
    fn(prefix + ".omega", p.omega);
    fn(prefix + ".phi", p.phi);
}
template <typename T, typename F>
void visit_params(const T2vParams<T>& p, const std::string& prefix, F&& fn) {
    fn(prefix + ".omega", p.omega);
    fn(prefix + ".phi", p.phi);
}

template <typename T>
struct T2vVars {
    Var<T> omega, phi;
    std::size_t width = 0;
};

template <typename T>
T2vVars<T> bind(Binder<T>& b, const T2vParams<T>& p) {
    T2vVars<T> v;
    v.omega = b(p.omega);
    v.phi = b(p.phi);
    v.width = p.width();
    return v;
}

/// T2V(t) for one (pre-normalized) timestamp.
template <typename T>
Var<T> t2v(T t, const T2vVars<T>& vars) {
    using namespace numerics;
    Var<T> lin = add(scale(vars.omega, t), vars.phi);
    if (vars.width == 1) return lin;
    return concat(slice(lin, 0, 1), cos(slice(lin, 1, vars.width - 1)));
}

/// T2V of a column of timestamps, one row per time.
template <typename T>
Var<T> t2v_rows(Tape<T>& tape, const Tensor<T>& times, const T2vVars<T>& vars) {
    using namespace numerics;
    const std::size_t n = times.size();
    Var<T> tcol = tape.constant(Tensor<T>::matrix(n, 1, std::vector<T>(times.values())));
    Var<T> om = reshape(vars.omega, {1, vars.width});
    Var<T> lin = add(matmul(tcol, om), vars.phi);
    if (vars.width == 1) return lin;
    return concat_cols(slice_cols(lin, 0, 1), cos(slice_cols(lin, 1, vars.width - 1)));
}

// ---------------------------------------------------------------------------
// Transformer
// ---------------------------------------------------------------------------

template <typename T>
struct TransformerLayerParams {
    std::vector<Tensor<T>> w_q, w_k, w_v;          // per head: (width x head_dim)
    Tensor<T> w_out;                               // (heads*head_dim x model)
    Tensor<T> ff1_w, ff1_b, ff2_w, ff2_b;          // position-wise feed-forward
    Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

/// Transformer encoder over one edge's event matrix. The production
/// configuration uses an input projection, multi-head attention, residual
/// connections with layer norm and a feed-forward block; `bare()` builds the
/// unadorned single-head attention of the scaled dot-product definition.
/// No causal mask and no positional encoding: order information enters only
/// through the time features.
template <typename T>
struct TransformerParams {
    std::size_t input_dim = 0;
    std::size_t model_dim = 0;
    std::size_t heads = 1;
    bool input_proj = false;
    bool output_proj = false;
    bool feed_forward = false;
    bool layer_norm = false;
    Tensor<T> w_in;  // (input x model), when input_proj
    std::vector<TransformerLayerParams<T>> layers;

    std::size_t head_dim() const { return model_dim / heads; }
    std::size_t output_dim() const { return model_dim; }

    static TransformerParams full(std::size_t input_dim, std::size_t model_dim,
                                  std::size_t heads, std::size_t num_layers, Rng& rng) {
        if (heads == 0 || model_dim % heads != 0) {
            throw ConfigError("transformer: heads must divide the model width (" +
                              std::to_string(heads) + " vs " + std::to_string(model_dim) + ")");
        }
        TransformerParams p;
        p.input_dim = input_dim;
        p.model_dim = model_dim;
        p.heads = heads;
        p.input_proj = p.output_proj = p.feed_forward = p.layer_norm = true;
        p.w_in = glorot_uniform<T>(input_dim, model_dim, {input_dim, model_dim}, rng);
        const std::size_t dk = model_dim / heads;
        const std::size_t ff = 2 * model_dim;
        for (std::size_t l = 0; l < num_layers; ++l) {
            TransformerLayerParams<T> lp;
            for (std::size_t h = 0; h < heads; ++h) {
                lp.w_q.push_back(glorot_uniform<T>(model_dim, dk, {model_dim, dk}, rng));
                lp.w_k.push_back(glorot_uniform<T>(model_dim, dk, {model_dim, dk}, rng));
                lp.w_v.push_back(glorot_uniform<T>(model_dim, dk, {model_dim, dk}, rng));
            }
            lp.w_out = glorot_uniform<T>(model_dim, model_dim, {model_dim, model_dim}, rng);
            lp.ff1_w = glorot_uniform<T>(model_dim, ff, {model_dim, ff}, rng);
            lp.ff1_b = Tensor<T>::zeros({ff});
            lp.ff2_w = glorot_uniform<T>(ff, model_dim, {ff, model_dim}, rng);
            lp.ff2_b = Tensor<T>::zeros({model_dim});
            lp.ln1_gain = Tensor<T>::full({model_dim}, T(1));
            lp.ln1_bias = Tensor<T>::zeros({model_dim});
            lp.ln2_gain = Tensor<T>::full({model_dim}, T(1));
            lp.ln2_bias = Tensor<T>::zeros({model_dim});
            p.layers.push_back(std::move(lp));
        }
        return p;
    }

    /// Single-head softmax(QK^T/sqrt(dk))V with no projections around it.
    static TransformerParams bare(std::size_t input_dim, std::size_t head_dim, Rng& rng) {
        TransformerParams p;
        p.input_dim = input_dim;
        p.model_dim = head_dim;
        p.heads = 1;
        TransformerLayerParams<T> lp;
        lp.w_q.push_back(glorot_uniform<T>(input_dim, head_dim, {input_dim, head_dim}, rng));
        lp.w_k.push_back(glorot_uniform<T>(input_dim, head_dim, {input_dim, head_dim}, rng));
        lp.w_v.push_back(glorot_uniform<T>(input_dim, head_dim, {input_dim, head_dim}, rng));
        p.layers.push_back(std::move(lp));
        return p;
    }
};

namespace detail {

template <typename P, typename F>
void visit_transformer(P& params, const std::string& prefix, F&& fn) {
    if (params.input_proj) fn(prefix + ".w_in", params.w_in);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& lp = params.layers[l];
        const std::string lpfx = prefix + ".layer" + std::to_string(l);
        for (std::size_t h = 0; h < params.heads; ++h) {
            fn(lpfx + ".h" + std::to_string(h) + ".w_q", lp.w_q[h]);
            fn(lpfx + ".h" + std::to_string(h) + ".w_k", lp.w_k[h]);
            fn(lpfx + ".h" + std::to_string(h) + ".w_v", lp.w_v[h]);
        }
        if (params.output_proj) fn(lpfx + ".w_out", lp.w_out);
        if (params.feed_forward) {
            fn(lpfx + ".ff1_w", lp.ff1_w);
            fn(lpfx + ".ff1_b", lp.ff1_b);
            fn(lpfx + ".ff2_w", lp.ff2_w);
            fn(lpfx + ".ff2_b", lp.ff2_b);
        }
        if (params.layer_norm) {
            fn(lpfx + ".ln1_gain", lp.ln1_gain);
            fn(lpfx + ".ln1_bias", lp.ln1_bias);
            fn(lpfx + ".ln2_gain", lp.ln2_gain);
            fn(lpfx + ".ln2_bias", lp.ln2_bias);
        }
    }
}

}  // namespace detail

template <typename T, typename F>
void visit_params(TransformerParams<T>& p, const std::string& prefix, F&& fn) {
    detail::visit_transformer(p, prefix, fn);
}
template <typename T, typename F>
void visit_params(const TransformerParams<T>& p, const std::string& prefix, F&& fn) {
    detail::visit_transformer(p, prefix, fn);
}

template <typename T>
struct TransformerLayerVars {
    std::vector<Var<T>> w_q, w_k, w_v;
    Var<T> w_out, ff1_w, ff1_b, ff2_w, ff2_b;
    Var<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

template <typename T>
struct TransformerVars {
    std::size_t heads = 1;
    bool input_proj = false, output_proj = false, feed_forward = false, layer_norm = false;
    Var<T> w_in;
    std::vector<TransformerLayerVars<T>> layers;
};

template <typename T>
TransformerVars<T> bind(Binder<T>& b, const TransformerParams<T>& p) {
    TransformerVars<T> v;
    v.heads = p.heads;
    v.input_proj = p.input_proj;
    v.output_proj = p.output_proj;
    v.feed_forward = p.feed_forward;
    v.layer_norm = p.layer_norm;
    if (p.input_proj) v.w_in = b(p.w_in);
    for (const auto& lp : p.layers) {
        TransformerLayerVars<T> lv;
        for (std::size_t h = 0; h < p.heads; ++h) {
            lv.w_q.push_back(b(lp.w_q[h]));
            lv.w_k.push_back(b(lp.w_k[h]));
            lv.w_v.push_back(b(lp.w_v[h]));
        }
        if (p.output_proj) lv.w_out = b(lp.w_out);
        if (p.feed_forward) {
            lv.ff1_w = b(lp.ff1_w);
            lv.ff1_b = b(lp.ff1_b);
            lv.ff2_w = b(lp.ff2_w);
            lv.ff2_b = b(lp.ff2_b);
        }
        if (p.layer_norm) {
            lv.ln1_gain = b(lp.ln1_gain);
            lv.ln1_bias = b(lp.ln1_bias);
            lv.ln2_gain = b(lp.ln2_gain);
            lv.ln2_bias = b(lp.ln2_bias);
        }
        v.layers.push_back(std::move(lv));
    }
    return v;
}

/// softmax(Q K^T / sqrt(dk)) V. The attention matrix is written to
/// `attn_out` when requested (rows sum to 1).
template <typename T>
Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v, Var<T>* attn_out = nullptr) {
    using namespace numerics;
    const std::size_t dk = q.value().dim(1);
    Var<T> scores = scale(matmul(q, transpose(k)), T(1) / static_cast<T>(std::sqrt(
                                                              static_cast<double>(dk))));
    Var<T> attn = softmax(scores);
    if (attn_out) *attn_out = attn;
    return matmul(attn, v);
}

/// Edge embedding of one sequence: the last row of the encoder output over
/// the (S x D_in) event matrix. Full attention, no causal mask.
template <typename T>
Var<T> transformer_encode(Var<T> events, const TransformerVars<T>& vars) {
    using namespace numerics;
    const std::size_t s = events.value().dim(0);
    Var<T> x = vars.input_proj ? matmul(events, vars.w_in) : events;
    for (const TransformerLayerVars<T>& layer : vars.layers) {
        std::vector<Var<T>> heads;
        for (std::size_t h = 0; h < vars.heads; ++h) {
            Var<T> q = matmul(x, layer.w_q[h]);
            Var<T> k = matmul(x, layer.w_k[h]);
            Var<T> v = matmul(x, layer.w_v[h]);
            heads.push_back(scaled_dot_attention(q, k, v));
        }
        Var<T> attn = heads[0];
        for (std::size_t h = 1; h < heads.size(); ++h) attn = concat_cols(attn, heads[h]);
        if (vars.output_proj) attn = matmul(attn, layer.w_out);
        x = vars.layer_norm ? layer_norm(add(x, attn), layer.ln1_gain, layer.ln1_bias) : attn;
        if (vars.feed_forward) {
            Var<T> ff = add(matmul(relu(add(matmul(x, layer.ff1_w), layer.ff1_b)),
                                   layer.ff2_w),
                            layer.ff2_b);
            Var<T> merged = add(x, ff);
            x = vars.layer_norm ? layer_norm(merged, layer.ln2_gain, layer.ln2_bias) : merged;
        }
    }
    return row(x, s - 1);
}

// ---------------------------------------------------------------------------
// Attention scorer: a second sequence model M_a plus a weight vector a;
// the raw score of an edge is a^T M_a(sequence).
// ---------------------------------------------------------------------------

template <typename T>
using SeqParams = std::variant<LstmParams<T>, TransformerParams<T>>;

template <typename T>
struct AttentionScorerParams {
    SeqParams<T> model;
    Tensor<T> weight;  // (output width of the model)
};

/// a^T h for one encoded sequence.
template <typename T>
Var<T> attention_score(Var<T> encoded, Var<T> weight) {
    return numerics::dot(weight, encoded);
}

// ---------------------------------------------------------------------------
// Event input construction shared by every encoder variant.
//
// The raw event feature vector is extended with the canonical direction flag.
// Vanilla variants prepend the normalized timestamp; T2V variants append the
// learned time encoding instead (index 0 of T2V carries the linear term, so
// the raw timestamp is dropped). The `zero_edges` ablation replaces each
// sequence with a single all-zero event so that edge sequences carry no
// information at all (not even their length).
// ---------------------------------------------------------------------------

struct EventInputSpec {
    bool use_t2v = false;
    std::size_t t2v_width = 0;  // l + 1
    std::size_t seq_cap = 32;   // keep the most recent events
    bool zero_edges = false;
};

inline std::size_t event_input_dim(std::size_t edge_feat_dim, const EventInputSpec& spec) {
    const std::size_t base = edge_feat_dim + 1;  // + direction flag
    return spec.use_t2v ? base + spec.t2v_width : base + 1;
}

/// Index of the first event kept after truncation to the most recent
/// `seq_cap` events.
inline std::size_t truncation_start(std::size_t length, std::size_t cap) {
    return length > cap ? length - cap : 0;
}

/// Raw (non-time) slice of one event: [features..., dir].
template <typename T>
std::vector<T> event_raw_features(const graph::EventRecord& ev) {
    std::vector<T> out;
    out.reserve(ev.features.size() + 1);
    for (double f : ev.features) out.push_back(static_cast<T>(f));
    out.push_back(static_cast<T>(ev.dir));
    return out;
}

/// Per-event input vectors of one edge sequence, as tape vars. Only the T2V
/// path records trainable structure; everything else is constant data.
template <typename T>
std::vector<Var<T>> build_event_inputs(Tape<T>& tape, const graph::EdgeSequence& seq,
                                       const graph::TemporalGraph& graph,
                                       const EventInputSpec& spec,
                                       const T2vVars<std::type_identity_t<T>>* t2v_vars) {
    using namespace numerics;
    std::vector<Var<T>> out;
    if (spec.zero_edges) {
        out.push_back(tape.constant(
            Tensor<T>::zeros({event_input_dim(graph.edge_feat_dim, spec)})));
        return out;
    }
    const std::size_t start = truncation_start(seq.events.size(), spec.seq_cap);
    for (std::size_t i = start; i < seq.events.size(); ++i) {
        const graph::EventRecord& ev = seq.events[i];
        const T tn = static_cast<T>(graph.normalize_time(ev.t));
        std::vector<T> raw = event_raw_features<T>(ev);
        if (spec.use_t2v) {
            if (!t2v_vars) throw ConfigError("build_event_inputs: T2V parameters missing");
            Var<T> base = tape.constant(Tensor<T>::vector(std::move(raw)));
            out.push_back(concat(base, t2v(tn, *t2v_vars)));
        } else {
            std::vector<T> full;
            full.reserve(raw.size() + 1);
            full.push_back(tn);
            full.insert(full.end(), raw.begin(), raw.end());
            out.push_back(tape.constant(Tensor<T>::vector(std::move(full))));
        }
    }
    return out;
}

/// Per-event inputs stacked into one (S x D_in) matrix (transformer input).
template <typename T>
Var<T> build_event_matrix(Tape<T>& tape, const graph::EdgeSequence& seq,
                          const graph::TemporalGraph& graph, const EventInputSpec& spec,
                          const T2vVars<std::type_identity_t<T>>* t2v_vars) {
    std::vector<Var<T>> rows = build_event_inputs(tape, seq, graph, spec, t2v_vars);
    return numerics::stack_rows(std::span<const Var<T>>(rows));
}

}  // namespace gtea::encoders
