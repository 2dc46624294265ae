#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gtea/gnn.hpp"
#include "gtea/graph.hpp"
#include "gtea/synthetic.hpp"

namespace gtea::training {

using graph::NodeId;
using graph::TemporalGraph;
using numerics::Tensor;
using numerics::Var;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Node-classification metrics. Per-class F1 treats 0/0 as 0; macro-F1 is
/// the unweighted mean over all classes, absent ones included.
struct Metrics {
    double accuracy = 0.0;
    std::vector<double> precision, recall, f1;
    double macro_f1 = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
};

Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                        int num_classes);

/// Argmax with ties broken toward the lowest class index.
template <typename T>
int argmax_row(const Tensor<T>& logits, std::size_t row) {
    const std::size_t c = logits.dim(1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
        if (logits.at(row, j) > logits.at(row, best)) best = j;
    }
    return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean cross-entropy of the labeled seed rows (stable log-softmax under
/// the hood). The mean keeps the learning rate independent of batch size.
template <typename T>
Var<T> cross_entropy_loss(Var<T> logits, const std::vector<int>& labels) {
    if (labels.empty()) throw DataError("cross_entropy_loss: no labeled seeds");
    return numerics::cross_entropy(logits, labels);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;
    std::vector<Tensor<T>> m;  // first moments, aligned with the parameter order
    std::vector<Tensor<T>> v;  // second moments
};

template <typename T>
AdamState<T> make_adam(const gnn::GteaModel<T>& model, double lr) {
    AdamState<T> s;
    s.lr = lr;
    gnn::visit_params(model, [&](const std::string&, const Tensor<T>& t) {
        s.m.push_back(Tensor<T>::zeros(std::vector<std::size_t>(t.shape())));
        s.v.push_back(Tensor<T>::zeros(std::vector<std::size_t>(t.shape())));
    });
    return s;
}

/// One bias-corrected Adam update, applied in the fixed parameter order.
/// A non-finite gradient aborts the step before touching any parameter.
template <typename T>
void adam_step(std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw ShapeError("adam_step: parameter/gradient/state count mismatch");
    }
    for (const Tensor<T>& g : grads) {
        if (!g.all_finite()) {
            throw NumericError("adam_step: non-finite gradient; aborting the update");
        }
    }
    ++state.step_count;
    const double bc1 = 1.0 - std::pow(state.beta1, state.step_count);
    const double bc2 = 1.0 - std::pow(state.beta2, state.step_count);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor<T>& w = *params[p];
        const Tensor<T>& g = grads[p];
        Tensor<T>& m = state.m[p];
        Tensor<T>& v = state.v[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gi;
            const double vi = state.beta2 * static_cast<double>(v[i]) +
                              (1.0 - state.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            w[i] = static_cast<T>(static_cast<double>(w[i]) -
                                  state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Training configuration and loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::uint64_t seed = 1;
    double lr = 1e-2;              // default grid: {1e-4, 1e-3, 1e-2}
    std::size_t batch_size = 64;   // default grid: {32, 64, 128}
    std::vector<std::size_t> fanouts = {10, 10};  // default grid: {5, 10, 25}
    std::size_t epochs = 100;
    std::size_t patience = 20;
    double train_ratio = 0.6;
    double val_ratio = 0.2;
    double test_ratio = 0.2;
    bool ablate_zero_edges = false;
    gnn::GteaConfig model;

    void validate() const {
        model.validate();
        if (lr <= 0) throw ConfigError("train config: lr must be positive");
        if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
        if (patience < 1) throw ConfigError("train config: patience must be >= 1");
        if (fanouts.size() < model.gnn_layers) {
            throw ConfigError("train config: need one fanout per GNN layer");
        }
        for (std::size_t f : fanouts) {
            if (f < 1) throw ConfigError("train config: fanouts must be >= 1");
        }
        if (train_ratio <= 0 || val_ratio <= 0 || test_ratio <= 0 ||
            std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
            throw ConfigError("train config: split ratios must be positive and sum to 1");
        }
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    double val_macro_f1 = 0.0;
};

struct TrainResult {
    gnn::GteaModel<float> model;   // best validation checkpoint
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    Metrics test;
    gnn::ForwardStats test_attention;
    bool diverged = false;
};

/// Deterministic seed-node batching for evaluation or prediction.
template <typename T>
std::vector<int> predict(const gnn::GteaModel<T>& model, const TemporalGraph& graph,
                         const std::vector<NodeId>& nodes, const TrainConfig& cfg,
                         std::uint64_t stream_seed, gnn::ForwardStats* stats = nullptr) {
    std::vector<int> preds(nodes.size(), 0);
    std::vector<NodeId> sorted_nodes = nodes;
    std::sort(sorted_nodes.begin(), sorted_nodes.end());
    std::size_t done = 0;
    std::size_t batch_index = 0;
    while (done < sorted_nodes.size()) {
        const std::size_t take = std::min(cfg.batch_size, sorted_nodes.size() - done);
        std::vector<NodeId> chunk(sorted_nodes.begin() + done,
                                  sorted_nodes.begin() + done + take);
        Rng rng(derive_seed(stream_seed, 0x6261746368ULL, batch_index));
        graph::MiniBatch batch =
            graph::make_minibatch(graph, chunk, cfg.model.gnn_layers, cfg.fanouts, rng);
        if (batch.seeds.size() != chunk.size()) {
            throw DataError("predict: duplicate nodes in the request");
        }
        numerics::Tape<T> tape;
        gnn::Binder<T> binder(tape);
        gnn::GteaModelVars<T> vars = gnn::bind(binder, model);
        gnn::ForwardOptions opts;
        opts.zero_edges = cfg.ablate_zero_edges;
        opts.stats = stats;
        Var<T> logits = gnn::forward(tape, batch, graph, vars, model.config, opts);
        const Tensor<T>& lv = logits.value();
        for (std::size_t i = 0; i < batch.seeds.size(); ++i) {
            preds[done + i] = argmax_row(lv, i);
        }
        done += take;
        ++batch_index;
    }
    // predictions align with the sorted node order
    return preds;
}

/// Metrics of a model on a fully labeled node set.
template <typename T>
Metrics evaluate(const gnn::GteaModel<T>& model, const TemporalGraph& graph,
                 const std::vector<NodeId>& nodes, const TrainConfig& cfg,
                 std::uint64_t stream_seed, gnn::ForwardStats* stats = nullptr) {
    if (nodes.empty()) throw DataError("evaluate: empty node set");
    std::vector<NodeId> sorted_nodes = nodes;
    std::sort(sorted_nodes.begin(), sorted_nodes.end());
    std::vector<int> truth;
    truth.reserve(sorted_nodes.size());
    for (NodeId u : sorted_nodes) {
        const int lab = graph.labels[static_cast<std::size_t>(u)];
        if (lab == graph::kUnlabeled) {
            throw DataError("evaluate: node " + std::to_string(u) + " is unlabeled");
        }
        truth.push_back(lab);
    }
    std::vector<int> preds = predict(model, graph, sorted_nodes, cfg, stream_seed, stats);
    return compute_metrics(truth, preds, model.config.num_classes);
}

/// The stratified train/val/test split a training run with this config
/// uses; evaluation recomputes it from the checkpointed seed.
graph::DatasetSplit dataset_split_for(const TemporalGraph& graph, const TrainConfig& cfg);

/// Mini-batch training with neighbor sampling, validation-based early
/// stopping (best macro-F1 checkpoint, `patience` epochs of grace) and a
/// final test evaluation of the best checkpoint. Deterministic for a fixed
/// config and seed. A numeric failure aborts with the last good checkpoint.
TrainResult train(const TemporalGraph& graph, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpointing (JSON container; bit-exact parameter round-trip)
// ---------------------------------------------------------------------------

struct Checkpoint {
    TrainConfig config;
    gnn::GteaModel<float> model;
    std::vector<EpochRecord> history;
};

void save_checkpoint(const gnn::GteaModel<float>& model, const TrainConfig& config,
                     const std::vector<EpochRecord>& history, const std::string& path);

/// Load a checkpoint; when `expected` is given every architecture field is
/// compared and a mismatch raises DataError naming the field.
Checkpoint load_checkpoint(const std::string& path,
                           const gnn::GteaConfig* expected = nullptr);

/// Metrics report serialization shared by the CLI and the tests.
std::string metrics_report_json(const TrainResult& result, const TrainConfig& config);

/// Standalone metrics report (eval command).
std::string metrics_json(const Metrics& metrics);

}  // namespace gtea::training
