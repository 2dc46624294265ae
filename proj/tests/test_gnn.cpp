#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gtea/gnn.hpp"
#include "gtea/synthetic.hpp"
#include "oracles.hpp"

using namespace gtea::gnn;
using namespace gtea::numerics;
using gtea::ConfigError;
using gtea::DataError;
using gtea::Rng;
using gtea::ShapeError;
using gtea::graph::MiniBatch;
using gtea::graph::NodeId;
using gtea::graph::TemporalGraph;

namespace {

// plain-double two-layer MLP reference
std::vector<double> mlp_ref(const MlpParams<double>& mlp, const std::vector<double>& x) {
    std::vector<double> h = x;
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        const auto& w = mlp.layers[l].w;
        const auto& b = mlp.layers[l].b;
        std::vector<double> out(w.dim(1), 0.0);
        for (std::size_t j = 0; j < w.dim(1); ++j) {
            out[j] = b[j];
            for (std::size_t i = 0; i < w.dim(0); ++i) out[j] += h[i] * w.at(i, j);
        }
        if (l + 1 < mlp.layers.size() && mlp.activation == Activation::kRelu) {
            for (double& v : out) v = std::max(0.0, v);
        }
        h = std::move(out);
    }
    return h;
}

TemporalGraph tiny_graph() {
    // 4 nodes in a loop-ish shape: edges (0,1), (1,2), (2,3), (0,2)
    TemporalGraph g;
    g.num_nodes = 4;
    g.node_feat_dim = 2;
    g.edge_feat_dim = 1;
    g.num_classes = 2;
    g.node_features = {{0.5, -0.2}, {1.0, 0.3}, {-0.7, 0.8}, {0.1, 0.9}};
    g.labels = {0, 1, 0, 1};
    auto mk_seq = [](NodeId a, NodeId b, std::vector<double> ts, double scale) {
        gtea::graph::EdgeSequence s;
        s.pair = {std::min(a, b), std::max(a, b)};
        int flip = 1;
        for (double t : ts) {
            gtea::graph::EventRecord ev;
            ev.u = flip > 0 ? s.pair.first : s.pair.second;
            ev.v = flip > 0 ? s.pair.second : s.pair.first;
            ev.t = t;
            ev.features = {scale * (t + 1.0) / 10.0};
            ev.dir = flip;
            flip = -flip;
            s.events.push_back(std::move(ev));
        }
        return s;
    };
    g.edges.push_back(mk_seq(0, 1, {0.0, 2.0, 5.0}, 1.0));
    g.edges.push_back(mk_seq(1, 2, {1.0, 4.0}, -1.0));
    g.edges.push_back(mk_seq(2, 3, {3.0}, 0.5));
    g.edges.push_back(mk_seq(0, 2, {0.5, 2.5, 4.5, 6.0}, -0.8));
    g.adjacency.assign(4, {});
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        auto [a, b] = g.edges[e].pair;
        g.adjacency[a].emplace_back(b, static_cast<gtea::graph::EdgeId>(e));
        g.adjacency[b].emplace_back(a, static_cast<gtea::graph::EdgeId>(e));
    }
    for (auto& n : g.adjacency) std::sort(n.begin(), n.end());
    g.t_min = 0.0;
    g.t_max = 6.0;
    return g;
}

GteaConfig tiny_config() {
    GteaConfig c;
    c.node_feat_dim = 2;
    c.edge_feat_dim = 1;
    c.num_classes = 2;
    c.hidden_dim = 3;
    c.attn_hidden_dim = 3;
    c.gnn_layers = 2;
    return c;
}

Tensor<double> flatten_model(const GteaModel<double>& m) {
    std::vector<double> flat;
    visit_params(m, [&](const std::string&, const Tensor<double>& t) {
        flat.insert(flat.end(), t.values().begin(), t.values().end());
    });
    return Tensor<double>::vector(std::move(flat));
}

// Independent full forward in plain double arithmetic: scalar LSTM
// reference for the encoders, brute-force simplex projection for the
// attention, explicit loops for the MLP algebra.
std::vector<std::vector<double>> reference_forward(const TemporalGraph& g,
                                                   const GteaModel<double>& m,
                                                   const MiniBatch& batch) {
    const auto& mt = std::get<gtea::encoders::LstmParams<double>>(m.edge_encoder);
    const auto& ma = std::get<gtea::encoders::LstmParams<double>>(m.score_encoder);
    auto lstm_weights = [](const gtea::encoders::LstmParams<double>& p) {
        const auto& l = p.layers[0];
        return oracles::LstmRefWeights{
            l.w_i.values(), l.w_f.values(), l.w_c.values(), l.w_o.values(),
            l.u_i.values(), l.u_f.values(), l.u_c.values(), l.u_o.values(),
            l.b_i.values(), l.b_f.values(), l.b_c.values(), l.b_o.values()};
    };

    // encode every edge once (vanilla inputs: [t_norm, features..., dir])
    std::vector<std::vector<double>> emb(g.edges.size());
    std::vector<double> score(g.edges.size());
    const std::size_t d_in = g.edge_feat_dim + 2;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        std::vector<std::vector<double>> inputs;
        for (const auto& ev : g.edges[e].events) {
            std::vector<double> x;
            x.push_back(g.normalize_time(ev.t));
            for (double f : ev.features) x.push_back(f);
            x.push_back(ev.dir);
            inputs.push_back(std::move(x));
        }
        emb[e] = oracles::lstm_ref(inputs, lstm_weights(mt), d_in, m.config.hidden_dim);
        const auto h = oracles::lstm_ref(inputs, lstm_weights(ma), d_in,
                                         m.config.attn_hidden_dim);
        score[e] = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) score[e] += m.attn_weight[i] * h[i];
    }

    // level-0 embeddings
    std::vector<std::vector<double>> z;
    for (NodeId u : batch.input_nodes) z.push_back(g.node_features[u]);

    for (std::size_t l = 1; l <= m.config.gnn_layers; ++l) {
        const auto& params = m.layers[l - 1];
        std::vector<std::vector<double>> next;
        for (const auto& target : batch.layers[l - 1].targets) {
            std::vector<double> z_n(m.config.layer_output_dim(l), 0.0);
            if (!target.nbr_rows.empty()) {
                Tensor<double> raw = Tensor<double>::zeros({target.nbr_rows.size()});
                for (std::size_t i = 0; i < target.nbr_rows.size(); ++i) {
                    raw[i] = score[batch.edge_ids[target.edge_cols[i]]];
                }
                Tensor<double> alpha = oracles::simplex_projection_bruteforce(raw);
                for (std::size_t i = 0; i < target.nbr_rows.size(); ++i) {
                    std::vector<double> cat = z[target.nbr_rows[i]];
                    const auto& e = emb[batch.edge_ids[target.edge_cols[i]]];
                    cat.insert(cat.end(), e.begin(), e.end());
                    const std::vector<double> out = mlp_ref(params.mlp1, cat);
                    for (std::size_t j = 0; j < z_n.size(); ++j) z_n[j] += alpha[i] * out[j];
                }
            }
            std::vector<double> cat = z[target.self_row];
            cat.insert(cat.end(), z_n.begin(), z_n.end());
            next.push_back(mlp_ref(params.mlp2, cat));
        }
        z = std::move(next);
    }
    return z;
}

}  // namespace

TEST_CASE("sparse_attention examples") {
    Tape<double> tp;
    auto single = sparse_attention(tp.constant(Tensor<double>::vector({2.7})));
    CHECK(single.value()[0] == 1.0);

    auto even = sparse_attention(tp.constant(Tensor<double>::vector({0.4, 0.4})));
    CHECK(even.value()[0] == doctest::Approx(0.5));
    CHECK(even.value()[1] == doctest::Approx(0.5));

    auto filtered = sparse_attention(tp.constant(Tensor<double>::vector({1.5, 0.5})));
    CHECK(filtered.value()[0] == 1.0);
    CHECK(filtered.value()[1] == 0.0);

    auto soft = sparse_attention(tp.constant(Tensor<double>::vector({1.5, 0.5})),
                                 AttentionKind::kSoftmax);
    CHECK(soft.value()[1] > 0.0);
}

TEST_CASE("aggregate_neighborhood with identity and convex weights") {
    Tape<double> tp;
    MlpParams<double> ident = MlpParams<double>::identity(5);
    Binder<double> b(tp);
    MlpVars<double> mlp = bind(b, ident);

    auto z = tp.constant(Tensor<double>::matrix(1, 3, {1.0, 2.0, 3.0}));
    auto e = tp.constant(Tensor<double>::matrix(1, 2, {4.0, 5.0}));
    auto alpha = tp.constant(Tensor<double>::vector({1.0}));
    auto out = aggregate_neighborhood(z, e, alpha, mlp);
    CHECK(out.value() == Tensor<double>::vector({1, 2, 3, 4, 5}));

    auto z2 = tp.constant(Tensor<double>::matrix(2, 3, {1, 2, 3, 5, 6, 7}));
    auto e2 = tp.constant(Tensor<double>::matrix(2, 2, {4, 5, 8, 9}));
    auto alpha2 = tp.constant(Tensor<double>::vector({0.5, 0.5}));
    auto out2 = aggregate_neighborhood(z2, e2, alpha2, mlp);
    CHECK(out2.value() == Tensor<double>::vector({3, 4, 5, 6, 7}));

    auto bad = tp.constant(Tensor<double>::vector({0.5}));
    CHECK_THROWS_AS(aggregate_neighborhood(z2, e2, bad, mlp), ShapeError);

    CHECK(zero_neighborhood(tp, 4).value() == Tensor<double>::zeros({4}));
}

TEST_CASE("update_node closed forms and dense oracle") {
    Tape<double> tp;
    MlpParams<double> ident = MlpParams<double>::identity(4);
    Binder<double> b(tp);
    MlpVars<double> mv = bind(b, ident);
    auto zu = tp.constant(Tensor<double>::vector({1.0, -1.0}));
    auto zn = tp.constant(Tensor<double>::vector({2.0, 3.0}));
    CHECK(update_node(zu, zn, mv).value() == Tensor<double>::vector({1, -1, 2, 3}));

    // zero weights leave only the bias
    MlpParams<double> biased = MlpParams<double>::identity(4);
    for (std::size_t i = 0; i < biased.layers[0].w.size(); ++i) biased.layers[0].w[i] = 0.0;
    biased.layers[0].b = Tensor<double>::vector({0.1, 0.2, 0.3, 0.4});
    Binder<double> b2(tp);
    MlpVars<double> bv = bind(b2, biased);
    CHECK(update_node(zu, zn, bv).value() == Tensor<double>::vector({0.1, 0.2, 0.3, 0.4}));

    // random parameters against the plain-double reference
    Rng rng(3);
    MlpParams<double> rand_mlp = MlpParams<double>::two_layer(4, 3, rng);
    Binder<double> b3(tp);
    MlpVars<double> rv = bind(b3, rand_mlp);
    const Tensor<double> got = update_node(zu, zn, rv).value();
    const std::vector<double> want = mlp_ref(rand_mlp, {1.0, -1.0, 2.0, 3.0});
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(got[i] - want[i]) <= 1e-6);
    }
}

TEST_CASE("config validation rejects inconsistent widths") {
    GteaConfig c = tiny_config();
    c.gnn_layers = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    GteaConfig c2 = tiny_config();
    c2.seq_model = gtea::encoders::SeqModelKind::kTransformer;
    c2.transformer_heads = 4;
    c2.hidden_dim = 6;  // not divisible by 4
    CHECK_THROWS_AS(c2.validate(), ConfigError);

    TemporalGraph g = tiny_graph();
    GteaConfig c3 = tiny_config();
    c3.node_feat_dim = 7;
    try {
        check_config_against_graph(c3, g);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("node_feat_dim") != std::string::npos);
    }
}

TEST_CASE("forward matches an independent plain-double composition") {
    TemporalGraph g = tiny_graph();
    GteaConfig cfg = tiny_config();
    Rng rng(21);
    GteaModel<double> model = GteaModel<double>::init(cfg, rng);

    Rng brng(5);
    MiniBatch batch = gtea::graph::make_minibatch(g, {0, 1, 2, 3}, 2, {10, 10}, brng);

    Tape<double> tape;
    Binder<double> binder(tape);
    GteaModelVars<double> vars = bind(binder, model);
    Var<double> logits = forward(tape, batch, g, vars, cfg);

    const auto ref = reference_forward(g, model, batch);
    REQUIRE(ref.size() == batch.seeds.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        for (std::size_t j = 0; j < ref[i].size(); ++j) {
            CHECK(std::abs(logits.value().at(i, j) - ref[i][j]) <= 1e-8);
        }
    }
}

TEST_CASE("isolated seed reduces to MLP2 of [x || 0]") {
    TemporalGraph g = tiny_graph();
    // isolate node 3 by removing its only edge (2,3)
    g.edges.erase(g.edges.begin() + 2);
    g.adjacency.assign(4, {});
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        auto [a, b] = g.edges[e].pair;
        g.adjacency[a].emplace_back(b, static_cast<gtea::graph::EdgeId>(e));
        g.adjacency[b].emplace_back(a, static_cast<gtea::graph::EdgeId>(e));
    }
    for (auto& n : g.adjacency) std::sort(n.begin(), n.end());

    GteaConfig cfg = tiny_config();
    cfg.gnn_layers = 1;
    Rng rng(33);
    GteaModel<double> model = GteaModel<double>::init(cfg, rng);

    Rng brng(1);
    MiniBatch batch = gtea::graph::make_minibatch(g, {3}, 1, {10}, brng);
    Tape<double> tape;
    Binder<double> binder(tape);
    GteaModelVars<double> vars = bind(binder, model);
    Var<double> logits = forward(tape, batch, g, vars, cfg);

    const std::vector<double> want = mlp_ref(
        model.layers[0].mlp2, {0.1, 0.9, 0.0, 0.0});  // x_3 || zero neighborhood
    for (std::size_t j = 0; j < 2; ++j) {
        CHECK(logits.value().at(0, j) == doctest::Approx(want[j]).epsilon(1e-12));
    }
}

TEST_CASE("removing a zero-attention neighbor leaves logits bitwise unchanged") {
    gtea::graph::GenSpec spec;
    spec.num_nodes = 64;
    spec.avg_degree = 6;
    Rng grng(8);
    TemporalGraph g = gtea::graph::generate_synthetic(spec, grng);

    GteaConfig cfg = tiny_config();
    cfg.node_feat_dim = spec.node_feat_dim;
    cfg.edge_feat_dim = spec.edge_feat_dim;
    cfg.hidden_dim = 4;
    cfg.attn_hidden_dim = 4;
    Rng mrng(9);
    GteaModel<double> model = GteaModel<double>::init(cfg, mrng);
    // spread the raw scores so sparsemax actually filters at init
    for (std::size_t i = 0; i < model.attn_weight.size(); ++i) {
        model.attn_weight[i] *= 5000.0;
    }

    Rng brng(10);
    MiniBatch batch = gtea::graph::make_minibatch(g, {0, 1, 2, 3, 4, 5, 6, 7}, 2, {10, 10},
                                                  brng);

    auto run = [&](const MiniBatch& b) {
        Tape<double> tape;
        Binder<double> binder(tape);
        GteaModelVars<double> vars = bind(binder, model);
        return forward(tape, b, g, vars, cfg).value();
    };
    const Tensor<double> base = run(batch);

    // locate zero-attention (target, neighbor) slots via the edge scores
    Tensor<double> scores;
    {
        Tape<double> tape;
        Binder<double> binder(tape);
        GteaModelVars<double> vars = bind(binder, model);
        EncodedEdges<double> enc = encode_batch_edges(tape, batch, g, vars, cfg, false);
        scores = enc.scores.value();
        // map back from packed rows to batch edge columns
        Tensor<double> by_col = Tensor<double>::zeros({scores.size()});
        for (std::size_t col = 0; col < enc.packed_row.size(); ++col) {
            by_col[col] = scores[enc.packed_row[col]];
        }
        scores = by_col;
    }

    int removed = 0;
    for (std::size_t l = 0; l < batch.layers.size() && removed < 6; ++l) {
        for (std::size_t t = 0; t < batch.layers[l].targets.size() && removed < 6; ++t) {
            const auto& target = batch.layers[l].targets[t];
            if (target.nbr_ids.size() < 2) continue;
            Tensor<double> raw = Tensor<double>::zeros({target.nbr_ids.size()});
            for (std::size_t i = 0; i < target.nbr_ids.size(); ++i) {
                raw[i] = scores[target.edge_cols[i]];
            }
            Tensor<double> alpha = gtea::numerics::sparsemax(raw);
            for (std::size_t i = 0; i < alpha.size(); ++i) {
                if (alpha[i] != 0.0) continue;
                MiniBatch pruned = batch;
                auto& pt = pruned.layers[l].targets[t];
                pt.nbr_ids.erase(pt.nbr_ids.begin() + i);
                pt.nbr_rows.erase(pt.nbr_rows.begin() + i);
                pt.edge_cols.erase(pt.edge_cols.begin() + i);
                const Tensor<double> pruned_logits = run(pruned);
                CHECK(pruned_logits == base);
                ++removed;
                break;
            }
        }
    }
    // the scaled scorer must have produced at least a few exact zeros
    CHECK(removed >= 3);
}

TEST_CASE("linear aggregation decomposes into two independent sums; relu does not") {
    Rng rng(77);
    const std::size_t zw = 3, ew = 2, out = 5;
    Tape<double> tp;
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    auto rand_mat = [&](std::size_t r, std::size_t c) {
        Tensor<double> m = Tensor<double>::zeros({r, c});
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = dist(rng);
        return m;
    };

    const Tensor<double> zs = rand_mat(4, zw);
    const Tensor<double> es = rand_mat(4, ew);
    Tensor<double> alpha = Tensor<double>::full({4}, 0.25);

    MlpParams<double> lin = MlpParams<double>::linear(zw + ew, out, rng);
    Binder<double> b(tp);
    MlpVars<double> lv = bind(b, lin);
    const Tensor<double> combined =
        aggregate_neighborhood(tp.constant(zs), tp.constant(es), tp.constant(alpha), lv)
            .value();

    // W = [W1; W2] row blocks: the weighted sums route through each block
    std::vector<double> want(out, 0.0);
    for (std::size_t j = 0; j < out; ++j) {
        for (std::size_t n = 0; n < 4; ++n) {
            double acc = 0.0;
            for (std::size_t i = 0; i < zw; ++i) acc += zs.at(n, i) * lin.layers[0].w.at(i, j);
            for (std::size_t i = 0; i < ew; ++i) {
                acc += es.at(n, i) * lin.layers[0].w.at(zw + i, j);
            }
            want[j] += 0.25 * acc;
        }
    }
    // equivalently: W1 (sum alpha z) + W2 (sum alpha e)
    for (std::size_t j = 0; j < out; ++j) {
        double split = 0.0;
        for (std::size_t i = 0; i < zw; ++i) {
            double s = 0.0;
            for (std::size_t n = 0; n < 4; ++n) s += 0.25 * zs.at(n, i);
            split += s * lin.layers[0].w.at(i, j);
        }
        for (std::size_t i = 0; i < ew; ++i) {
            double s = 0.0;
            for (std::size_t n = 0; n < 4; ++n) s += 0.25 * es.at(n, i);
            split += s * lin.layers[0].w.at(zw + i, j);
        }
        CHECK(std::abs(combined[j] - split) <= 1e-12);
        CHECK(std::abs(combined[j] - want[j]) <= 1e-12);
    }

    // the production two-layer ReLU aggregation must NOT decompose this way
    MlpParams<double> mlp = MlpParams<double>::two_layer(zw + ew, out, rng);
    Binder<double> b2(tp);
    MlpVars<double> mv = bind(b2, mlp);
    const Tensor<double> nonlin =
        aggregate_neighborhood(tp.constant(zs), tp.constant(es), tp.constant(alpha), mv)
            .value();
    // split route: apply the MLP to (sum alpha z || sum alpha e)
    std::vector<double> mean_cat(zw + ew, 0.0);
    for (std::size_t n = 0; n < 4; ++n) {
        for (std::size_t i = 0; i < zw; ++i) mean_cat[i] += 0.25 * zs.at(n, i);
        for (std::size_t i = 0; i < ew; ++i) mean_cat[zw + i] += 0.25 * es.at(n, i);
    }
    const std::vector<double> split_route = mlp_ref(mlp, mean_cat);
    double diff = 0.0;
    for (std::size_t j = 0; j < out; ++j) diff += std::abs(nonlin[j] - split_route[j]);
    CHECK(diff > 1e-6);
}

TEST_CASE("neighbor enumeration order cannot change logits") {
    // the same graph loaded from differently ordered event files gives
    // bitwise identical results: reductions follow canonical sorted ids
    TemporalGraph g1 = tiny_graph();
    TemporalGraph g2 = tiny_graph();
    // rebuild g2's edge store in reversed order (new edge ids, same content)
    std::reverse(g2.edges.begin(), g2.edges.end());
    g2.adjacency.assign(4, {});
    for (std::size_t e = 0; e < g2.edges.size(); ++e) {
        auto [a, b] = g2.edges[e].pair;
        g2.adjacency[a].emplace_back(b, static_cast<gtea::graph::EdgeId>(e));
        g2.adjacency[b].emplace_back(a, static_cast<gtea::graph::EdgeId>(e));
    }
    for (auto& n : g2.adjacency) std::sort(n.begin(), n.end());

    GteaConfig cfg = tiny_config();
    Rng rng(55);
    GteaModel<double> model = GteaModel<double>::init(cfg, rng);

    auto run = [&](const TemporalGraph& g) {
        Rng brng(6);
        MiniBatch batch = gtea::graph::make_minibatch(g, {0, 1, 2, 3}, 2, {10, 10}, brng);
        Tape<double> tape;
        Binder<double> binder(tape);
        GteaModelVars<double> vars = bind(binder, model);
        return forward(tape, batch, g, vars, cfg).value();
    };
    CHECK(run(g1) == run(g2));
}

TEST_CASE("batched forward equals single-edge composition for the T2V variant") {
    TemporalGraph g = tiny_graph();
    GteaConfig cfg = tiny_config();
    cfg.use_t2v = true;
    cfg.t2v_periodic_terms = 3;
    Rng rng(66);
    GteaModel<double> model = GteaModel<double>::init(cfg, rng);

    Rng brng(7);
    MiniBatch batch = gtea::graph::make_minibatch(g, {0, 1, 2, 3}, 2, {10, 10}, brng);
    Tape<double> tape;
    Binder<double> binder(tape);
    GteaModelVars<double> vars = bind(binder, model);
    Var<double> logits = forward(tape, batch, g, vars, cfg);

    // manual per-node composition over single-edge encodings
    const auto& mt = std::get<gtea::encoders::LstmVars<double>>(vars.edge_encoder);
    const auto& ma = std::get<gtea::encoders::LstmVars<double>>(vars.score_encoder);
    const auto spec = cfg.event_spec();
    std::vector<Var<double>> emb(g.edges.size()), score(g.edges.size());
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        auto ins = gtea::encoders::build_event_inputs(tape, g.edges[e], g, spec, &*vars.t2v);
        emb[e] = gtea::encoders::lstm_encode(tape, std::span<const Var<double>>(ins), mt);
        auto h = gtea::encoders::lstm_encode(tape, std::span<const Var<double>>(ins), ma);
        score[e] = gtea::encoders::attention_score(h, vars.attn_weight);
    }
    std::vector<Var<double>> z;
    for (NodeId u : batch.input_nodes) {
        std::vector<double> row = g.node_features[u];
        z.push_back(tape.constant(Tensor<double>::vector(std::move(row))));
    }
    for (std::size_t l = 1; l <= cfg.gnn_layers; ++l) {
        std::vector<Var<double>> next;
        for (const auto& target : batch.layers[l - 1].targets) {
            Var<double> zn;
            if (target.nbr_rows.empty()) {
                zn = zero_neighborhood(tape, cfg.layer_output_dim(l));
            } else {
                std::vector<Var<double>> srows, zrows, erows;
                for (std::size_t i = 0; i < target.nbr_rows.size(); ++i) {
                    srows.push_back(score[batch.edge_ids[target.edge_cols[i]]]);
                    zrows.push_back(z[target.nbr_rows[i]]);
                    erows.push_back(emb[batch.edge_ids[target.edge_cols[i]]]);
                }
                Var<double> alpha =
                    sparse_attention(concat(std::span<const Var<double>>(srows)));
                zn = aggregate_neighborhood(
                    stack_rows(std::span<const Var<double>>(zrows)),
                    stack_rows(std::span<const Var<double>>(erows)), alpha,
                    vars.layers[l - 1].mlp1);
            }
            next.push_back(update_node(z[target.self_row], zn, vars.layers[l - 1].mlp2));
        }
        z = std::move(next);
    }
    for (std::size_t i = 0; i < batch.seeds.size(); ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(logits.value().at(i, j) == z[i].value()[j]);
        }
    }
}

TEST_CASE("batched forward equals single-edge composition for the transformer variant") {
    TemporalGraph g = tiny_graph();
    GteaConfig cfg = tiny_config();
    cfg.seq_model = gtea::encoders::SeqModelKind::kTransformer;
    cfg.hidden_dim = 4;
    cfg.attn_hidden_dim = 4;
    cfg.transformer_heads = 2;
    cfg.transformer_layers = 1;
    Rng rng(99);
    GteaModel<double> model = GteaModel<double>::init(cfg, rng);

    Rng brng(12);
    MiniBatch batch = gtea::graph::make_minibatch(g, {0, 1, 2, 3}, 2, {10, 10}, brng);
    Tape<double> tape;
    Binder<double> binder(tape);
    GteaModelVars<double> vars = bind(binder, model);
    Var<double> logits = forward(tape, batch, g, vars, cfg);

    const auto& mt = std::get<gtea::encoders::TransformerVars<double>>(vars.edge_encoder);
    const auto& ma = std::get<gtea::encoders::TransformerVars<double>>(vars.score_encoder);
    const auto spec = cfg.event_spec();
    std::vector<Var<double>> emb(g.edges.size()), score(g.edges.size());
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        auto events = gtea::encoders::build_event_matrix<double>(tape, g.edges[e], g, spec,
                                                                 nullptr);
        emb[e] = gtea::encoders::transformer_encode(events, mt);
        score[e] = gtea::encoders::attention_score(
            gtea::encoders::transformer_encode(events, ma), vars.attn_weight);
    }
    std::vector<Var<double>> z;
    for (NodeId u : batch.input_nodes) {
        z.push_back(tape.constant(Tensor<double>::vector(
            std::vector<double>(g.node_features[u]))));
    }
    for (std::size_t l = 1; l <= cfg.gnn_layers; ++l) {
        std::vector<Var<double>> next;
        for (const auto& target : batch.layers[l - 1].targets) {
            Var<double> zn;
            if (target.nbr_rows.empty()) {
                zn = zero_neighborhood(tape, cfg.layer_output_dim(l));
            } else {
                std::vector<Var<double>> srows, zrows, erows;
                for (std::size_t i = 0; i < target.nbr_rows.size(); ++i) {
                    srows.push_back(score[batch.edge_ids[target.edge_cols[i]]]);
                    zrows.push_back(z[target.nbr_rows[i]]);
                    erows.push_back(emb[batch.edge_ids[target.edge_cols[i]]]);
                }
                Var<double> alpha =
                    sparse_attention(concat(std::span<const Var<double>>(srows)));
                zn = aggregate_neighborhood(
                    stack_rows(std::span<const Var<double>>(zrows)),
                    stack_rows(std::span<const Var<double>>(erows)), alpha,
                    vars.layers[l - 1].mlp1);
            }
            next.push_back(update_node(z[target.self_row], zn, vars.layers[l - 1].mlp2));
        }
        z = std::move(next);
    }
    for (std::size_t i = 0; i < batch.seeds.size(); ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(logits.value().at(i, j) == z[i].value()[j]);
        }
    }
}

TEST_CASE("end-to-end gradients on the 4-node graph") {
    TemporalGraph g = tiny_graph();
    GteaConfig cfg = tiny_config();
    Rng rng(88);
    GteaModel<double> model = GteaModel<double>::init(cfg, rng);
    Rng brng(11);
    MiniBatch batch = gtea::graph::make_minibatch(g, {0, 1, 2, 3}, 2, {10, 10}, brng);
    const std::vector<int> labels = {0, 1, 0, 1};

    const double err = gradient_check(
        [&](Tape<double>& tape, Var<double> x) {
            Binder<double> binder(tape, x);
            GteaModelVars<double> vars = bind(binder, model);
            Var<double> logits = forward(tape, batch, g, vars, cfg);
            return cross_entropy(logits, std::vector<int>(labels));
        },
        flatten_model(model), 1e-6);
    CHECK(err <= 1e-4);
}
