#include <algorithm>

#include "gtea/training.hpp"

namespace gtea::training {

namespace {

constexpr std::uint64_t kSplitTag = 0x73706c6974ULL;
constexpr std::uint64_t kInitTag = 0x696e6974ULL;
constexpr std::uint64_t kShuffleTag = 0x73687566ULL;
constexpr std::uint64_t kBatchTag = 0x747261696eULL;
constexpr std::uint64_t kValTag = 0x76616cULL;
constexpr std::uint64_t kTestTag = 0x74657374ULL;

void shuffle_nodes(std::vector<NodeId>& v, Rng& rng) {
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
        std::swap(v[i], v[pick(rng)]);
    }
}

}  // namespace

graph::DatasetSplit dataset_split_for(const TemporalGraph& graph, const TrainConfig& cfg) {
    Rng split_rng(derive_seed(cfg.seed, kSplitTag));
    return graph::split_dataset(graph, cfg.train_ratio, cfg.val_ratio, cfg.test_ratio,
                                split_rng);
}

TrainResult train(const TemporalGraph& graph, const TrainConfig& cfg) {
    cfg.validate();
    gnn::check_config_against_graph(cfg.model, graph);

    graph::DatasetSplit split = dataset_split_for(graph, cfg);
    if (split.train.empty() || split.val.empty() || split.test.empty()) {
        throw DataError("train: every split needs at least one labeled node");
    }

    Rng init_rng(derive_seed(cfg.seed, kInitTag));
    gnn::GteaModel<float> model = gnn::GteaModel<float>::init(cfg.model, init_rng);
    AdamState<float> adam = make_adam(model, cfg.lr);
    auto params = gnn::named_params(model);
    std::vector<numerics::Tensor<float>*> param_ptrs;
    param_ptrs.reserve(params.size());
    for (auto& [name, t] : params) param_ptrs.push_back(t);

    TrainResult result;
    result.model = model;  // updated on every validation improvement
    double best_f1 = -1.0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<NodeId> order = split.train;
        Rng shuffle_rng(derive_seed(cfg.seed, kShuffleTag, epoch));
        shuffle_nodes(order, shuffle_rng);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        bool aborted = false;
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            const std::size_t take = std::min(cfg.batch_size, order.size() - off);
            std::vector<NodeId> chunk(order.begin() + off, order.begin() + off + take);
            Rng batch_rng(derive_seed(cfg.seed, kBatchTag, epoch, batches));
            try {
                graph::MiniBatch batch = graph::make_minibatch(
                    graph, chunk, cfg.model.gnn_layers, cfg.fanouts, batch_rng);
                std::vector<int> labels;
                labels.reserve(batch.seeds.size());
                for (NodeId s : batch.seeds) labels.push_back(graph.labels[s]);

                numerics::Tape<float> tape;
                gnn::Binder<float> binder(tape);
                gnn::GteaModelVars<float> vars = gnn::bind(binder, model);
                gnn::ForwardOptions opts;
                opts.zero_edges = cfg.ablate_zero_edges;
                Var<float> logits = gnn::forward(tape, batch, graph, vars, cfg.model, opts);
                Var<float> loss = cross_entropy_loss(logits, labels);
                loss_sum += static_cast<double>(loss.value().item());
                tape.backward(loss);

                // binder order lines up with the visit_params/adam order
                std::vector<numerics::Tensor<float>> grads;
                grads.reserve(binder.bound().size());
                for (Var<float> v : binder.bound()) grads.push_back(tape.grad(v));
                adam_step(param_ptrs, grads, adam);
            } catch (const NumericError&) {
                result.diverged = true;
                aborted = true;
                break;
            }
            ++batches;
        }
        if (aborted) break;

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
        Metrics val = evaluate(model, graph, split.val, cfg, derive_seed(cfg.seed, kValTag));
        rec.val_accuracy = val.accuracy;
        rec.val_macro_f1 = val.macro_f1;
        result.history.push_back(rec);

        if (val.macro_f1 > best_f1) {
            best_f1 = val.macro_f1;
            result.best_epoch = epoch;
            result.model = model;
        } else if (epoch - result.best_epoch >= cfg.patience) {
            break;
        }
    }

    // a diverged run keeps the last good checkpoint; scoring it against the
    // same data that blew up would only re-raise
    if (!result.diverged) {
        result.test = evaluate(result.model, graph, split.test, cfg,
                               derive_seed(cfg.seed, kTestTag), &result.test_attention);
    }
    return result;
}

}  // namespace gtea::training
