#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gtea/encoders.hpp"
#include "gtea/graph.hpp"
#include "oracles.hpp"

using namespace gtea::encoders;
using namespace gtea::numerics;
using gtea::Rng;

namespace {

LstmParams<double> zero_lstm(std::size_t in, std::size_t hidden) {
    Rng rng(0);
    LstmParams<double> p = LstmParams<double>::glorot(in, hidden, 1, rng);
    visit_params(p, "z", [](const std::string&, Tensor<double>& t) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    });
    return p;
}

std::vector<Var<double>> random_inputs(Tape<double>& tp, std::size_t count, std::size_t dim,
                                       Rng& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<Var<double>> out;
    for (std::size_t i = 0; i < count; ++i) {
        Tensor<double> t = Tensor<double>::zeros({dim});
        for (std::size_t j = 0; j < dim; ++j) t[j] = dist(rng);
        out.push_back(tp.constant(std::move(t)));
    }
    return out;
}

oracles::LstmRefWeights to_ref(const LstmParams<double>& p) {
    const auto& l = p.layers[0];
    return {l.w_i.values(), l.w_f.values(), l.w_c.values(), l.w_o.values(),
            l.u_i.values(), l.u_f.values(), l.u_c.values(), l.u_o.values(),
            l.b_i.values(), l.b_f.values(), l.b_c.values(), l.b_o.values()};
}

template <typename P>
Tensor<double> flatten(const P& params) {
    std::vector<double> flat;
    visit_params(params, "f", [&](const std::string&, const Tensor<double>& t) {
        flat.insert(flat.end(), t.values().begin(), t.values().end());
    });
    return Tensor<double>::vector(std::move(flat));
}

}  // namespace

TEST_CASE("zero-weight LSTM maps every sequence to the zero vector") {
    LstmParams<double> p = zero_lstm(3, 4);
    Tape<double> tp;
    Binder<double> b(tp);
    LstmVars<double> vars = bind(b, p);
    Rng rng(1);
    auto inputs = random_inputs(tp, 5, 3, rng);
    Var<double> h = lstm_encode(tp, std::span<const Var<double>>(inputs), vars);
    for (std::size_t i = 0; i < 4; ++i) CHECK(h.value()[i] == 0.0);
}

TEST_CASE("single-step LSTM matches the scalar reference") {
    // scalar gates: every weight is a 1x1 matrix set by hand
    LstmParams<double> p = zero_lstm(1, 1);
    auto& l = p.layers[0];
    l.w_i[0] = 0.7;
    l.w_f[0] = -0.3;
    l.w_c[0] = 1.1;
    l.w_o[0] = 0.4;
    l.u_i[0] = 0.2;
    l.u_f[0] = 0.6;
    l.u_c[0] = -0.5;
    l.u_o[0] = 0.9;
    l.b_i[0] = 0.1;
    l.b_f[0] = -0.2;
    l.b_c[0] = 0.3;
    l.b_o[0] = -0.4;

    Tape<double> tp;
    Binder<double> b(tp);
    LstmVars<double> vars = bind(b, p);
    auto x = tp.constant(Tensor<double>::vector({0.8}));
    const Var<double> seq[] = {x};
    Var<double> h = lstm_encode(tp, std::span<const Var<double>>(seq), vars);
    const std::vector<double> ref = oracles::lstm_ref({{0.8}}, to_ref(p), 1, 1);
    CHECK(h.value()[0] == doctest::Approx(ref[0]).epsilon(1e-15));
}

TEST_CASE("LSTM matches scalar reference over multi-step sequences") {
    Rng rng(7);
    LstmParams<double> p = LstmParams<double>::glorot(3, 5, 1, rng);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<std::vector<double>> raw;
    for (int k = 0; k < 6; ++k) {
        std::vector<double> x(3);
        for (double& v : x) v = dist(rng);
        raw.push_back(x);
    }
    Tape<double> tp;
    Binder<double> b(tp);
    LstmVars<double> vars = bind(b, p);
    std::vector<Var<double>> inputs;
    for (const auto& x : raw) {
        inputs.push_back(tp.constant(Tensor<double>::vector(std::vector<double>(x))));
    }
    Var<double> h = lstm_encode(tp, std::span<const Var<double>>(inputs), vars);
    const std::vector<double> ref = oracles::lstm_ref(raw, to_ref(p), 3, 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(h.value()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("LSTM is order sensitive") {
    Rng rng(9);
    LstmParams<double> p = LstmParams<double>::glorot(2, 4, 1, rng);
    Tape<double> tp;
    Binder<double> b(tp);
    LstmVars<double> vars = bind(b, p);
    auto x1 = tp.constant(Tensor<double>::vector({1.0, 0.0}));
    auto x2 = tp.constant(Tensor<double>::vector({0.0, 1.0}));
    auto x3 = tp.constant(Tensor<double>::vector({0.5, -0.5}));
    const Var<double> fwd[] = {x1, x2, x3};
    const Var<double> rev[] = {x3, x2, x1};
    Var<double> hf = lstm_encode(tp, std::span<const Var<double>>(fwd), vars);
    Var<double> hr = lstm_encode(tp, std::span<const Var<double>>(rev), vars);
    double diff = 0.0;
    for (std::size_t i = 0; i < 4; ++i) diff += std::abs(hf.value()[i] - hr.value()[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("LSTM gate ranges stay in their activation intervals") {
    Rng rng(11);
    LstmParams<double> p = LstmParams<double>::glorot(3, 4, 1, rng);
    Tape<double> tp;
    Binder<double> b(tp);
    LstmVars<double> vars = bind(b, p);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    Var<double> h = tp.constant(Tensor<double>::zeros({4}));
    Var<double> c = tp.constant(Tensor<double>::zeros({4}));
    for (int k = 0; k < 20; ++k) {
        Tensor<double> x = Tensor<double>::zeros({3});
        for (std::size_t j = 0; j < 3; ++j) x[j] = dist(rng);
        LstmStep<double> s = lstm_step(tp.constant(std::move(x)), h, c, vars.layers[0]);
        for (std::size_t j = 0; j < 4; ++j) {
            for (Var<double> gate : {s.input_gate, s.forget_gate, s.output_gate}) {
                CHECK(gate.value()[j] > 0.0);
                CHECK(gate.value()[j] < 1.0);
            }
            CHECK(std::abs(s.candidate.value()[j]) < 1.0);
            CHECK(std::abs(s.hidden.value()[j]) < 1.0);
        }
        h = s.hidden;
        c = s.cell;
    }
}

TEST_CASE("packed LSTM equals per-sequence encoding bit for bit") {
    Rng rng(13);
    for (std::size_t num_layers : {std::size_t{1}, std::size_t{2}}) {
        LstmParams<double> p = LstmParams<double>::glorot(3, 4, num_layers, rng);
        const std::vector<std::size_t> lengths = {5, 3, 3, 1};

        // per-sequence inputs
        Tape<double> tp;
        Binder<double> b(tp);
        LstmVars<double> vars = bind(b, p);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        std::vector<std::vector<Tensor<double>>> seqs;
        for (std::size_t len : lengths) {
            std::vector<Tensor<double>> seq;
            for (std::size_t k = 0; k < len; ++k) {
                Tensor<double> x = Tensor<double>::zeros({3});
                for (std::size_t j = 0; j < 3; ++j) x[j] = dist(rng);
                seq.push_back(x);
            }
            seqs.push_back(seq);
        }

        std::vector<Tensor<double>> singles;
        for (const auto& seq : seqs) {
            std::vector<Var<double>> ins;
            for (const auto& x : seq) ins.push_back(tp.constant(x));
            singles.push_back(
                lstm_encode(tp, std::span<const Var<double>>(ins), vars).value());
        }

        // packed step matrices: active prefix by step
        std::vector<std::size_t> active;
        std::vector<Var<double>> steps;
        for (std::size_t k = 0; k < 5; ++k) {
            std::size_t n_k = 0;
            while (n_k < lengths.size() && lengths[n_k] > k) ++n_k;
            if (n_k == 0) break;
            active.push_back(n_k);
            Tensor<double> m = Tensor<double>::zeros({n_k, 3});
            for (std::size_t r = 0; r < n_k; ++r) {
                for (std::size_t j = 0; j < 3; ++j) m.at(r, j) = seqs[r][k][j];
            }
            steps.push_back(tp.constant(std::move(m)));
        }
        Var<double> packed = lstm_encode_packed(tp, std::span<const Var<double>>(steps),
                                                std::span<const std::size_t>(active), vars);
        for (std::size_t r = 0; r < lengths.size(); ++r) {
            for (std::size_t j = 0; j < 4; ++j) {
                CHECK(packed.value().at(r, j) == singles[r][j]);
            }
        }
    }
}

TEST_CASE("lstm_encode gradients match finite differences") {
    Rng rng(17);
    LstmParams<double> p = LstmParams<double>::glorot(2, 3, 1, rng);
    Tensor<double> point = flatten(p);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<std::vector<double>> raw = {{0.3, -0.5}, {0.9, 0.1}};
    Tensor<double> probe = Tensor<double>::zeros({3});
    for (std::size_t i = 0; i < 3; ++i) probe[i] = dist(rng);

    const double err = gradient_check(
        [&](Tape<double>& tp, Var<double> x) {
            Binder<double> b(tp, x);
            LstmVars<double> vars = bind(b, p);
            std::vector<Var<double>> ins;
            for (const auto& r : raw) {
                ins.push_back(tp.constant(Tensor<double>::vector(std::vector<double>(r))));
            }
            Var<double> h = lstm_encode(tp, std::span<const Var<double>>(ins), vars);
            return dot(h, tp.constant(probe));
        },
        point, 1e-6);
    CHECK(err <= 1e-5);
}

TEST_CASE("bare transformer: singleton attention returns e W_V") {
    Rng rng(19);
    TransformerParams<double> p = TransformerParams<double>::bare(3, 2, rng);
    Tape<double> tp;
    Binder<double> b(tp);
    TransformerVars<double> vars = bind(b, p);
    Tensor<double> e = Tensor<double>::matrix(1, 3, {0.5, -1.0, 2.0});
    Var<double> out = transformer_encode(tp.constant(e), vars);
    const auto want = oracles::matmul_ref(e.values(), p.layers[0].w_v[0].values(), 1, 3, 2);
    for (std::size_t j = 0; j < 2; ++j) {
        CHECK(out.value()[j] == doctest::Approx(want[j]).epsilon(1e-14));
    }
}

TEST_CASE("bare transformer: zero queries and keys average the value rows") {
    Rng rng(23);
    TransformerParams<double> p = TransformerParams<double>::bare(3, 2, rng);
    for (auto* w : {&p.layers[0].w_q[0], &p.layers[0].w_k[0]}) {
        for (std::size_t i = 0; i < w->size(); ++i) (*w)[i] = 0.0;
    }
    Tape<double> tp;
    Binder<double> b(tp);
    TransformerVars<double> vars = bind(b, p);
    Tensor<double> e = Tensor<double>::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Var<double> out = transformer_encode(tp.constant(e), vars);
    const auto ev = oracles::matmul_ref(e.values(), p.layers[0].w_v[0].values(), 3, 3, 2);
    for (std::size_t j = 0; j < 2; ++j) {
        const double mean = (ev[0 * 2 + j] + ev[1 * 2 + j] + ev[2 * 2 + j]) / 3.0;
        CHECK(out.value()[j] == doctest::Approx(mean).epsilon(1e-14));
    }
}

TEST_CASE("bare transformer matches the dense attention oracle") {
    Rng rng(29);
    TransformerParams<double> p = TransformerParams<double>::bare(4, 3, rng);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor<double> e = Tensor<double>::zeros({3, 4});
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = dist(rng);

    Tape<double> tp;
    Binder<double> b(tp);
    TransformerVars<double> vars = bind(b, p);
    Var<double> out = transformer_encode(tp.constant(e), vars);

    const auto q = oracles::matmul_ref(e.values(), p.layers[0].w_q[0].values(), 3, 4, 3);
    const auto k = oracles::matmul_ref(e.values(), p.layers[0].w_k[0].values(), 3, 4, 3);
    const auto v = oracles::matmul_ref(e.values(), p.layers[0].w_v[0].values(), 3, 4, 3);
    const auto attn = oracles::attention_ref(q, k, v, 3, 3, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::abs(out.value()[j] - attn[2 * 3 + j]) <= 1e-6);
    }
}

TEST_CASE("attention rows sum to one") {
    Rng rng(31);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tape<double> tp;
    auto rand_mat = [&](std::size_t r, std::size_t c) {
        Tensor<double> m = Tensor<double>::zeros({r, c});
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = dist(rng);
        return tp.constant(std::move(m));
    };
    Var<double> attn{};
    scaled_dot_attention(rand_mat(5, 3), rand_mat(5, 3), rand_mat(5, 2), &attn);
    for (std::size_t i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 5; ++j) sum += attn.value().at(i, j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("full transformer config is differentiable") {
    Rng rng(37);
    TransformerParams<double> p = TransformerParams<double>::full(3, 4, 2, 1, rng);
    Tensor<double> point = flatten(p);
    Tensor<double> e = Tensor<double>::zeros({3, 3});
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = dist(rng);
    Tensor<double> probe = Tensor<double>::zeros({4});
    for (std::size_t i = 0; i < 4; ++i) probe[i] = dist(rng);

    const double err = gradient_check(
        [&](Tape<double>& tp, Var<double> x) {
            Binder<double> b(tp, x);
            TransformerVars<double> vars = bind(b, p);
            Var<double> out = transformer_encode(tp.constant(e), vars);
            return dot(out, tp.constant(probe));
        },
        point, 1e-6);
    CHECK(err <= 1e-5);
}

TEST_CASE("time2vec closed forms") {
    T2vParams<double> p;
    p.omega = Tensor<double>::vector({2.0, 0.0, std::numbers::pi});
    p.phi = Tensor<double>::vector({1.0, 0.0, 0.0});
    Tape<double> tp;
    Binder<double> b(tp);
    T2vVars<double> vars = bind(b, p);

    Var<double> at3 = t2v(3.0, vars);
    CHECK(at3.value()[0] == doctest::Approx(7.0));        // linear: 2*3 + 1
    CHECK(at3.value()[1] == doctest::Approx(1.0));        // cos(0)
    Var<double> at1 = t2v(1.0, vars);
    CHECK(at1.value()[2] == doctest::Approx(-1.0));       // cos(pi)

    // periodic components stay within [-1, 1] and honor their period
    Rng rng(41);
    T2vParams<double> q = T2vParams<double>::init(5, rng);
    Binder<double> b2(tp);
    T2vVars<double> qv = bind(b2, q);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double t = dist(rng);
        Var<double> enc = t2v(t, qv);
        for (std::size_t i = 1; i < 6; ++i) {
            CHECK(std::abs(enc.value()[i]) <= 1.0);
            const double period = 2.0 * std::numbers::pi / q.omega[i];
            Var<double> shifted = t2v(t + period, qv);
            CHECK(shifted.value()[i] == doctest::Approx(enc.value()[i]).epsilon(1e-9));
        }
    }

    const double err = gradient_check(
        [&](Tape<double>& tp2, Var<double> x) {
            Binder<double> fb(tp2, x);
            T2vVars<double> fv = bind(fb, q);
            return sum(add(t2v(0.37, fv), t2v(0.81, fv)));
        },
        flatten(q), 1e-6);
    CHECK(err <= 1e-5);
}

TEST_CASE("event augmentation widths and time handling") {
    gtea::graph::TemporalGraph g;
    g.num_nodes = 2;
    g.node_feat_dim = 1;
    g.edge_feat_dim = 1;  // raw width 1; the direction flag makes it 2
    g.node_features = {{0.0}, {0.0}};
    g.labels = {0, 1};
    g.num_classes = 2;
    gtea::graph::EdgeSequence seq;
    seq.pair = {0, 1};
    seq.events.push_back({0, 1, 0.0, {0.5}, +1});
    seq.events.push_back({1, 0, 10.0, {0.7}, -1});
    seq.events.push_back({0, 1, 10.0, {0.9}, +1});
    g.edges.push_back(seq);
    g.adjacency = {{{1, 0}}, {{0, 0}}};
    g.t_min = 0.0;
    g.t_max = 10.0;

    EventInputSpec spec;
    spec.use_t2v = true;
    spec.t2v_width = 2;  // l = 1
    spec.seq_cap = 32;
    CHECK(event_input_dim(g.edge_feat_dim, spec) == 4);  // 1 feat + dir + (l+1)

    Rng rng(43);
    T2vParams<double> p = T2vParams<double>::init(1, rng);
    Tape<double> tp;
    Binder<double> b(tp);
    T2vVars<double> vars = bind(b, p);
    auto inputs = build_event_inputs(tp, g.edges[0], g, spec, &vars);
    REQUIRE(inputs.size() == 3);
    CHECK(inputs[0].size() == 4);
    // identical timestamps produce identical T2V suffixes
    CHECK(inputs[1].value()[2] == inputs[2].value()[2]);
    CHECK(inputs[1].value()[3] == inputs[2].value()[3]);
    // raw feature and direction flag come first
    CHECK(inputs[1].value()[0] == 0.7);
    CHECK(inputs[1].value()[1] == -1.0);

    // the vanilla variant keeps the normalized timestamp as a feature
    EventInputSpec vanilla;
    vanilla.seq_cap = 32;
    CHECK(event_input_dim(g.edge_feat_dim, vanilla) == 3);
    auto plain = build_event_inputs(tp, g.edges[0], g, vanilla, nullptr);
    CHECK(plain[0].value()[0] == 0.0);   // t = 0 normalized
    CHECK(plain[1].value()[0] == 1.0);   // t = 10 normalized to span end
    CHECK(plain[1].value()[1] == 0.7);
    CHECK(plain[1].value()[2] == -1.0);

    // sequence cap keeps the most recent events
    EventInputSpec capped = vanilla;
    capped.seq_cap = 2;
    auto recent = build_event_inputs(tp, g.edges[0], g, capped, nullptr);
    REQUIRE(recent.size() == 2);
    CHECK(recent[0].value()[1] == 0.7);
    CHECK(recent[1].value()[1] == 0.9);

    // ablation wipes the sequence down to one zero event
    EventInputSpec wiped = vanilla;
    wiped.zero_edges = true;
    auto zeroed = build_event_inputs(tp, g.edges[0], g, wiped, nullptr);
    REQUIRE(zeroed.size() == 1);
    for (std::size_t j = 0; j < 3; ++j) CHECK(zeroed[0].value()[j] == 0.0);
}

TEST_CASE("attention scores compose the sequence model with the weight vector") {
    Rng rng(47);
    LstmParams<double> ma = LstmParams<double>::glorot(2, 3, 1, rng);
    Tensor<double> a = Tensor<double>::vector({0.5, -1.0, 0.25});

    Tape<double> tp;
    Binder<double> b(tp);
    LstmVars<double> vars = bind(b, ma);
    Var<double> av = tp.param(a);
    std::vector<std::vector<double>> raw = {{0.2, -0.3}, {0.8, 0.5}};
    std::vector<Var<double>> ins;
    for (const auto& r : raw) {
        ins.push_back(tp.constant(Tensor<double>::vector(std::vector<double>(r))));
    }
    Var<double> h = lstm_encode(tp, std::span<const Var<double>>(ins), vars);
    Var<double> score = attention_score(h, av);

    const std::vector<double> ref_h = oracles::lstm_ref(raw, to_ref(ma), 2, 3);
    double want = 0.0;
    for (std::size_t i = 0; i < 3; ++i) want += a[i] * ref_h[i];
    CHECK(std::abs(score.value().item() - want) <= 1e-12);

    // zero weight vector kills every score
    Var<double> zero_a = tp.constant(Tensor<double>::zeros({3}));
    CHECK(attention_score(h, zero_a).value().item() == 0.0);

    // zero-weight scorer model gives zero scores through any a
    LstmParams<double> zp = zero_lstm(2, 3);
    Binder<double> zb(tp);
    LstmVars<double> zvars = bind(zb, zp);
    Var<double> zh = lstm_encode(tp, std::span<const Var<double>>(ins), zvars);
    CHECK(attention_score(zh, av).value().item() == 0.0);
}

TEST_CASE("binding from a flat vector reproduces fresh-parameter binding") {
    Rng rng(53);
    LstmParams<double> p = LstmParams<double>::glorot(3, 4, 2, rng);
    Tensor<double> flat = flatten(p);

    Tape<double> tp;
    Binder<double> fresh(tp);
    LstmVars<double> v1 = bind(fresh, p);
    Var<double> fv = tp.constant(flat);
    Binder<double> packed(tp, fv);
    LstmVars<double> v2 = bind(packed, p);
    CHECK(packed.consumed() == flat.size());

    std::vector<Var<double>> ins = [&] {
        Rng r2(54);
        return random_inputs(tp, 4, 3, r2);
    }();
    Var<double> h1 = lstm_encode(tp, std::span<const Var<double>>(ins), v1);
    Var<double> h2 = lstm_encode(tp, std::span<const Var<double>>(ins), v2);
    CHECK(h1.value() == h2.value());
}
