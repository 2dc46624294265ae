#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gtea/encoders.hpp"
#include "gtea/graph.hpp"
#include "gtea/tape.hpp"

namespace gtea::gnn {

using encoders::Binder;
using encoders::SeqModelKind;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

enum class AttentionKind { kSparsemax, kSoftmax };

/// Architecture of a GTEA model. Everything that determines tensor widths
/// lives here; validate() runs at model build time so that mismatches fail
/// before any forward pass.
struct GteaConfig {
    std::size_t node_feat_dim = 0;   // D_N, from the dataset
    std::size_t edge_feat_dim = 0;   // raw event feature width, from the dataset
    int num_classes = 0;

    SeqModelKind seq_model = SeqModelKind::kLstm;
    bool use_t2v = false;
    std::size_t t2v_periodic_terms = 7;   // l; encoding width is l+1

    std::size_t hidden_dim = 32;          // edge-embedding and GNN hidden width
    std::size_t attn_hidden_dim = 32;     // width of the scorer model M_a
    std::size_t gnn_layers = 2;           // L
    std::size_t lstm_layers = 1;
    std::size_t transformer_layers = 1;
    std::size_t transformer_heads = 4;
    AttentionKind attention = AttentionKind::kSparsemax;
    std::size_t seq_cap = 32;             // keep the most recent events per edge

    void validate() const {
        if (node_feat_dim == 0) throw ConfigError("config: node_feat_dim must be >= 1");
        if (edge_feat_dim == 0) throw ConfigError("config: edge_feat_dim must be >= 1");
        if (num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
        if (hidden_dim == 0 || attn_hidden_dim == 0) {
            throw ConfigError("config: hidden widths must be >= 1");
        }
        if (gnn_layers < 1 || gnn_layers > 3) {
            throw ConfigError("config: gnn_layers must be in {1, 2, 3}");
        }
        if (lstm_layers < 1) throw ConfigError("config: lstm_layers must be >= 1");
        if (transformer_layers < 1 || transformer_layers > 3) {
            throw ConfigError("config: transformer_layers must be in {1, 2, 3}");
        }
        if (seq_cap == 0) throw ConfigError("config: seq_cap must be >= 1");
        if (use_t2v && t2v_periodic_terms == 0) {
            throw ConfigError("config: t2v_periodic_terms must be >= 1");
        }
        if (seq_model == SeqModelKind::kTransformer) {
            if (transformer_heads == 0 || hidden_dim % transformer_heads != 0 ||
                attn_hidden_dim % transformer_heads != 0) {
                throw ConfigError("config: transformer_heads must divide hidden_dim and "
                                  "attn_hidden_dim");
            }
        }
    }

    encoders::EventInputSpec event_spec(bool zero_edges = false) const {
        encoders::EventInputSpec s;
        s.use_t2v = use_t2v;
        s.t2v_width = use_t2v ? t2v_periodic_terms + 1 : 0;
        s.seq_cap = seq_cap;
        s.zero_edges = zero_edges;
        return s;
    }

    std::size_t event_input_dim() const {
        return encoders::event_input_dim(edge_feat_dim, event_spec());
    }

    /// Node embedding width after layer l (1-based); layer L emits logits.
    std::size_t layer_output_dim(std::size_t l) const {
        return l == gnn_layers ? static_cast<std::size_t>(num_classes) : hidden_dim;
    }

    std::size_t layer_input_dim(std::size_t l) const {
        return l == 1 ? node_feat_dim : hidden_dim;
    }
};

// ---------------------------------------------------------------------------
// Two-layer perceptrons used by the neighborhood-aggregation and
// node-update steps. Test configurations expose single-layer linear/identity forms.
// ---------------------------------------------------------------------------

enum class Activation { kRelu, kIdentity };

template <typename T>
struct MlpParams {
    struct Layer {
        Tensor<T> w;  // (in x out)
        Tensor<T> b;  // (out)
    };
    std::vector<Layer> layers;
    Activation activation = Activation::kRelu;

    std::size_t input_dim() const { return layers.front().w.dim(0); }
    std::size_t output_dim() const { return layers.back().w.dim(1); }

    /// Production form: one hidden layer of the output width, ReLU inside.
    static MlpParams two_layer(std::size_t in, std::size_t out, Rng& rng) {
        MlpParams p;
        p.layers.push_back({encoders::glorot_uniform<T>(in, out, {in, out}, rng),
                            Tensor<T>::zeros({out})});
        p.layers.push_back({encoders::glorot_uniform<T>(out, out, {out, out}, rng),
                            Tensor<T>::zeros({out})});
        return p;
    }

    /// Test form: exact identity map.
    static MlpParams identity(std::size_t width) {
        MlpParams p;
        p.activation = Activation::kIdentity;
        Tensor<T> eye = Tensor<T>::zeros({width, width});
        for (std::size_t i = 0; i < width; ++i) eye.at(i, i) = T(1);
        p.layers.push_back({std::move(eye), Tensor<T>::zeros({width})});
        return p;
    }

    /// Test form: single linear map.
    static MlpParams linear(std::size_t in, std::size_t out, Rng& rng) {
        MlpParams p;
        p.activation = Activation::kIdentity;
        p.layers.push_back({encoders::glorot_uniform<T>(in, out, {in, out}, rng),
                            Tensor<T>::zeros({out})});
        return p;
    }
};

template <typename P, typename F>
void visit_mlp(P& p, const std::string& prefix, F&& fn) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        fn(prefix + ".w" + std::to_string(l), p.layers[l].w);
        fn(prefix + ".b" + std::to_string(l), p.layers[l].b);
    }
}

template <typename T>
struct MlpVars {
    struct Layer {
        Var<T> w, b;
    };
    std::vector<Layer> layers;
    Activation activation = Activation::kRelu;
};

template <typename T>
MlpVars<T> bind(Binder<T>& b, const MlpParams<T>& p) {
    MlpVars<T> v;
    v.activation = p.activation;
    for (const auto& layer : p.layers) v.layers.push_back({b(layer.w), b(layer.b)});
    return v;
}

/// Apply to a vector or row-wise to a matrix; the activation sits between
/// layers, never after the last one.
template <typename T>
Var<T> mlp_apply(Var<T> x, const MlpVars<T>& mlp) {
    using namespace numerics;
    Var<T> h = x;
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        h = add(matmul(h, mlp.layers[l].w), mlp.layers[l].b);
        const bool last = l + 1 == mlp.layers.size();
        if (!last && mlp.activation == Activation::kRelu) h = relu(h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Model parameters.
// ---------------------------------------------------------------------------

template <typename T>
struct GteaLayerParams {
    MlpParams<T> mlp1;  // ([z_v || e_uv]) -> hidden
    MlpParams<T> mlp2;  // ([z_u || z_nbhd]) -> output
};

template <typename T>
struct GteaModel {
    GteaConfig config;
    encoders::SeqParams<T> edge_encoder;   // M_t
    encoders::SeqParams<T> score_encoder;  // M_a
    Tensor<T> attn_weight;                 // a
    std::optional<encoders::T2vParams<T>> t2v;
    std::vector<GteaLayerParams<T>> layers;

    static GteaModel init(const GteaConfig& config, Rng& rng) {
        config.validate();
        GteaModel m;
        m.config = config;
        const std::size_t d_in = config.event_input_dim();
        if (config.seq_model == SeqModelKind::kLstm) {
            m.edge_encoder = encoders::LstmParams<T>::glorot(d_in, config.hidden_dim,
                                                             config.lstm_layers, rng);
            m.score_encoder = encoders::LstmParams<T>::glorot(d_in, config.attn_hidden_dim,
                                                              config.lstm_layers, rng);
        } else {
            m.edge_encoder = encoders::TransformerParams<T>::full(
                d_in, config.hidden_dim, config.transformer_heads, config.transformer_layers,
                rng);
            m.score_encoder = encoders::TransformerParams<T>::full(
                d_in, config.attn_hidden_dim, config.transformer_heads,
                config.transformer_layers, rng);
        }
        // Small-magnitude score vector: raw scores start nearly equal, so the
        // sparsemax support covers the whole sampled neighborhood and every
        // neighbor's score keeps receiving gradient until the scorer has
        // evidence to filter (outside the support the Jacobian is zero). The
        // spread must stay well under 1/fanout or large neighborhoods get
        // clipped at initialization.
        m.attn_weight = encoders::glorot_uniform<T>(config.attn_hidden_dim, 1,
                                                    {config.attn_hidden_dim}, rng);
        for (std::size_t i = 0; i < m.attn_weight.size(); ++i) {
            m.attn_weight[i] = static_cast<T>(0.01) * m.attn_weight[i];
        }
        if (config.use_t2v) {
            m.t2v = encoders::T2vParams<T>::init(config.t2v_periodic_terms, rng);
        }
        for (std::size_t l = 1; l <= config.gnn_layers; ++l) {
            const std::size_t in = config.layer_input_dim(l);
            const std::size_t out = config.layer_output_dim(l);
            GteaLayerParams<T> lp;
            lp.mlp1 = MlpParams<T>::two_layer(in + config.hidden_dim, out, rng);
            lp.mlp2 = MlpParams<T>::two_layer(in + out, out, rng);
            m.layers.push_back(std::move(lp));
        }
        return m;
    }
};

namespace detail {

template <typename M, typename F>
void visit_model(M& m, F&& fn) {
    std::visit([&](auto& enc) { encoders::visit_params(enc, "mt", fn); }, m.edge_encoder);
    std::visit([&](auto& enc) { encoders::visit_params(enc, "ma", fn); }, m.score_encoder);
    fn(std::string("attn.a"), m.attn_weight);
    if (m.t2v) encoders::visit_params(*m.t2v, "t2v", fn);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        visit_mlp(m.layers[l].mlp1, "layer" + std::to_string(l + 1) + ".mlp1", fn);
        visit_mlp(m.layers[l].mlp2, "layer" + std::to_string(l + 1) + ".mlp2", fn);
    }
}

}  // namespace detail

template <typename T, typename F>
void visit_params(GteaModel<T>& m, F&& fn) {
    detail::visit_model(m, fn);
}
template <typename T, typename F>
void visit_params(const GteaModel<T>& m, F&& fn) {
    detail::visit_model(m, fn);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_params(GteaModel<T>& m) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    visit_params(m, [&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
    return out;
}

template <typename T>
std::size_t param_count(const GteaModel<T>& m) {
    std::size_t n = 0;
    visit_params(m, [&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
}

template <typename T>
using SeqVars = std::variant<encoders::LstmVars<T>, encoders::TransformerVars<T>>;

template <typename T>
struct GteaModelVars {
    SeqVars<T> edge_encoder;
    SeqVars<T> score_encoder;
    Var<T> attn_weight;
    std::optional<encoders::T2vVars<T>> t2v;
    struct Layer {
        MlpVars<T> mlp1, mlp2;
    };
    std::vector<Layer> layers;
};

// binding order mirrors visit_model above
template <typename T>
GteaModelVars<T> bind(Binder<T>& b, const GteaModel<T>& m) {
    GteaModelVars<T> v;
    std::visit([&](const auto& enc) { v.edge_encoder = encoders::bind(b, enc); },
               m.edge_encoder);
    std::visit([&](const auto& enc) { v.score_encoder = encoders::bind(b, enc); },
               m.score_encoder);
    v.attn_weight = b(m.attn_weight);
    if (m.t2v) v.t2v = encoders::bind(b, *m.t2v);
    for (const auto& layer : m.layers) {
        v.layers.push_back({bind(b, layer.mlp1), bind(b, layer.mlp2)});
    }
    return v;
}

// ---------------------------------------------------------------------------
// The four per-neighborhood operations of a GTEA layer.
// ---------------------------------------------------------------------------

/// Attention weights over a sampled neighborhood's raw scores. Sparsemax
/// yields exact zeros for filtered neighbors; the softmax ablation never
/// does.
template <typename T>
Var<T> sparse_attention(Var<T> scores, AttentionKind kind = AttentionKind::kSparsemax) {
    return kind == AttentionKind::kSparsemax ? numerics::sparsemax(scores)
                                             : numerics::softmax(scores);
}

/// Attention-weighted sum over neighbors of MLP_1([z_v || e_uv]). Rows of the
/// three inputs must be aligned.
template <typename T>
Var<T> aggregate_neighborhood(Var<T> neighbor_embeddings, Var<T> edge_embeddings,
                              Var<T> weights, const MlpVars<T>& mlp1) {
    using namespace numerics;
    const std::size_t n = neighbor_embeddings.value().dim(0);
    if (edge_embeddings.value().dim(0) != n || weights.size() != n) {
        throw ShapeError("aggregate_neighborhood: misaligned neighbor lists: " +
                         neighbor_embeddings.value().shape_string() + ", " +
                         edge_embeddings.value().shape_string() + ", " +
                         weights.value().shape_string());
    }
    Var<T> transformed = mlp_apply(concat_cols(neighbor_embeddings, edge_embeddings), mlp1);
    return matmul(weights, transformed);
}

/// Empty-sum convention for isolated nodes.
template <typename T>
Var<T> zero_neighborhood(Tape<T>& tape, std::size_t width) {
    return tape.constant(Tensor<T>::zeros({width}));
}

/// Node update: z_u^(l) = MLP_2([z_u^(l-1) || z_nbhd]).
template <typename T>
Var<T> update_node(Var<T> z_self, Var<T> z_neighborhood, const MlpVars<T>& mlp2) {
    return mlp_apply(numerics::concat(z_self, z_neighborhood), mlp2);
}

// ---------------------------------------------------------------------------
// Full forward pass.
// ---------------------------------------------------------------------------

struct ForwardStats {
    std::size_t attention_entries = 0;
    std::size_t attention_zeros = 0;

    double zero_fraction() const {
        return attention_entries == 0
                   ? 0.0
                   : static_cast<double>(attention_zeros) /
                         static_cast<double>(attention_entries);
    }
};

struct ForwardOptions {
    bool zero_edges = false;     // ablation: wipe all edge sequences
    ForwardStats* stats = nullptr;
};

template <typename T>
struct EncodedEdges {
    Var<T> embeddings;             // (num edges x hidden), packed row order
    Var<T> scores;                 // (num edges), packed row order
    std::vector<int> packed_row;   // batch edge position -> packed row
};

/// Encode every edge of a batch once; embeddings and scores are reused by
/// all layers (the encoders have no layer dependence).
template <typename T>
EncodedEdges<T> encode_batch_edges(Tape<T>& tape, const graph::MiniBatch& batch,
                                   const graph::TemporalGraph& graph,
                                   const GteaModelVars<T>& vars, const GteaConfig& config,
                                   bool zero_edges) {
    using namespace numerics;
    const encoders::EventInputSpec spec = config.event_spec(zero_edges);
    const std::size_t n_edges = batch.edge_ids.size();
    if (n_edges == 0) {
        throw ShapeError("encode_batch_edges: batch has no edges");
    }
    const encoders::T2vVars<T>* t2v_vars = vars.t2v ? &*vars.t2v : nullptr;

    // Pack by non-increasing (capped) length; ties ordered by canonical pair.
    std::vector<int> order(n_edges);
    for (std::size_t i = 0; i < n_edges; ++i) order[i] = static_cast<int>(i);
    auto capped_len = [&](int pos) {
        if (spec.zero_edges) return std::size_t{1};
        const auto& seq = graph.edges[batch.edge_ids[pos]];
        return std::min(seq.length(), spec.seq_cap);
    };
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const std::size_t la = capped_len(a), lb = capped_len(b);
        if (la != lb) return la > lb;
        return graph.edges[batch.edge_ids[a]].pair < graph.edges[batch.edge_ids[b]].pair;
    });

    EncodedEdges<T> out;
    out.packed_row.assign(n_edges, 0);
    for (std::size_t r = 0; r < n_edges; ++r) out.packed_row[order[r]] = static_cast<int>(r);

    if (config.seq_model == SeqModelKind::kLstm) {
        const std::size_t max_len = capped_len(order[0]);
        const std::size_t raw_dim = spec.use_t2v ? config.edge_feat_dim + 1
                                                 : config.edge_feat_dim + 2;
        std::vector<Var<T>> steps;
        std::vector<std::size_t> active;
        for (std::size_t k = 0; k < max_len; ++k) {
            std::size_t n_k = 0;
            while (n_k < n_edges && capped_len(order[n_k]) > k) ++n_k;
            if (n_k == 0) break;
            active.push_back(n_k);
            Tensor<T> raw = Tensor<T>::zeros({n_k, raw_dim});
            Tensor<T> times = Tensor<T>::zeros({n_k});
            for (std::size_t r = 0; r < n_k; ++r) {
                const auto& seq = graph.edges[batch.edge_ids[order[r]]];
                if (!spec.zero_edges) {
                    const std::size_t start =
                        encoders::truncation_start(seq.length(), spec.seq_cap);
                    const graph::EventRecord& ev = seq.events[start + k];
                    const T tn = static_cast<T>(graph.normalize_time(ev.t));
                    std::vector<T> feats = encoders::event_raw_features<T>(ev);
                    if (spec.use_t2v) {
                        for (std::size_t j = 0; j < feats.size(); ++j) raw.at(r, j) = feats[j];
                        times[r] = tn;
                    } else {
                        raw.at(r, 0) = tn;
                        for (std::size_t j = 0; j < feats.size(); ++j)
                            raw.at(r, j + 1) = feats[j];
                    }
                }
            }
            Var<T> base = tape.constant(std::move(raw));
            steps.push_back(spec.use_t2v
                                ? concat_cols(base, encoders::t2v_rows(tape, times, *t2v_vars))
                                : base);
        }
        const auto& mt = std::get<encoders::LstmVars<T>>(vars.edge_encoder);
        const auto& ma = std::get<encoders::LstmVars<T>>(vars.score_encoder);
        out.embeddings = encoders::lstm_encode_packed(
            tape, std::span<const Var<T>>(steps), std::span<const std::size_t>(active), mt);
        Var<T> score_states = encoders::lstm_encode_packed(
            tape, std::span<const Var<T>>(steps), std::span<const std::size_t>(active), ma);
        out.scores = matmul(score_states, vars.attn_weight);
    } else {
        const auto& mt = std::get<encoders::TransformerVars<T>>(vars.edge_encoder);
        const auto& ma = std::get<encoders::TransformerVars<T>>(vars.score_encoder);
        std::vector<Var<T>> embs, scores;
        for (std::size_t r = 0; r < n_edges; ++r) {
            const auto& seq = graph.edges[batch.edge_ids[order[r]]];
            Var<T> events = encoders::build_event_matrix(tape, seq, graph, spec, t2v_vars);
            embs.push_back(encoders::transformer_encode(events, mt));
            scores.push_back(encoders::attention_score(
                encoders::transformer_encode(events, ma), vars.attn_weight));
        }
        out.embeddings = stack_rows(std::span<const Var<T>>(embs));
        out.scores = concat(std::span<const Var<T>>(scores));
    }
    return out;
}

/// Layer-stack forward pass over a sampled mini-batch: encode each edge
/// once, then per layer apply sparse attention, neighborhood aggregation
/// and node update. Returns pre-softmax logits, one row per seed (seeds in ascending
/// node order). Neighbor reductions run over id-sorted neighbor lists, so
/// the result is independent of enumeration order.
template <typename T>
Var<T> forward(Tape<T>& tape, const graph::MiniBatch& batch,
               const graph::TemporalGraph& graph, const GteaModelVars<T>& vars,
               const GteaConfig& config, const ForwardOptions& options = {}) {
    using namespace numerics;

    EncodedEdges<T> encoded;
    bool have_edges = !batch.edge_ids.empty();
    if (have_edges) {
        encoded = encode_batch_edges(tape, batch, graph, vars, config, options.zero_edges);
    }

    // Level-0 embeddings are the raw node features of the input frontier.
    Tensor<T> feats = Tensor<T>::zeros({batch.input_nodes.size(), config.node_feat_dim});
    for (std::size_t i = 0; i < batch.input_nodes.size(); ++i) {
        const auto& row = graph.node_features[batch.input_nodes[i]];
        if (row.size() != config.node_feat_dim) {
            throw ShapeError("forward: node " + std::to_string(batch.input_nodes[i]) +
                             " has feature width " + std::to_string(row.size()) +
                             ", config says " + std::to_string(config.node_feat_dim));
        }
        for (std::size_t j = 0; j < row.size(); ++j) feats.at(i, j) = static_cast<T>(row[j]);
    }
    Var<T> z = tape.constant(std::move(feats));

    for (std::size_t l = 1; l <= config.gnn_layers; ++l) {
        const auto& layer_vars = vars.layers[l - 1];
        const auto& layer_batch = batch.layers[l - 1];
        const std::size_t out_width = config.layer_output_dim(l);
        std::vector<Var<T>> next_rows;
        next_rows.reserve(layer_batch.targets.size());
        for (const auto& target : layer_batch.targets) {
            Var<T> z_nbhd;
            if (target.nbr_rows.empty()) {
                z_nbhd = zero_neighborhood(tape, out_width);
            } else {
                std::vector<int> packed;
                packed.reserve(target.edge_cols.size());
                for (int col : target.edge_cols) packed.push_back(encoded.packed_row[col]);
                Var<T> alpha = sparse_attention(gather(encoded.scores, packed),
                                                config.attention);
                if (options.stats) {
                    const Tensor<T>& av = alpha.value();
                    options.stats->attention_entries += av.size();
                    for (std::size_t i = 0; i < av.size(); ++i) {
                        if (av[i] == T(0)) ++options.stats->attention_zeros;
                    }
                }
                z_nbhd = aggregate_neighborhood(gather_rows(z, target.nbr_rows),
                                                gather_rows(encoded.embeddings, packed),
                                                alpha, layer_vars.mlp1);
            }
            next_rows.push_back(update_node(row(z, target.self_row), z_nbhd,
                                            layer_vars.mlp2));
        }
        z = stack_rows(std::span<const Var<T>>(next_rows));
    }
    return z;
}

/// Build-time compatibility check between a model configuration and a
/// dataset; errors name the offending field.
inline void check_config_against_graph(const GteaConfig& config,
                                       const graph::TemporalGraph& g) {
    if (config.node_feat_dim != g.node_feat_dim) {
        throw DataError("node_feat_dim mismatch: config " +
                        std::to_string(config.node_feat_dim) + " vs dataset " +
                        std::to_string(g.node_feat_dim));
    }
    if (config.edge_feat_dim != g.edge_feat_dim) {
        throw DataError("edge_feat_dim mismatch: config " +
                        std::to_string(config.edge_feat_dim) + " vs dataset " +
                        std::to_string(g.edge_feat_dim));
    }
    if (config.num_classes < g.num_classes) {
        throw DataError("num_classes mismatch: config " + std::to_string(config.num_classes) +
                        " vs dataset " + std::to_string(g.num_classes));
    }
}

}  // namespace gtea::gnn
