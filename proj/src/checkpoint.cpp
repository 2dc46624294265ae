#include <fstream>
#include <map>

#include <json.hpp>

#include "gtea/config.hpp"
#include "gtea/training.hpp"

namespace gtea::training {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json config_to_json(const TrainConfig& cfg) {
    const gnn::GteaConfig& m = cfg.model;
    json model{{"node_feat_dim", m.node_feat_dim},
               {"edge_feat_dim", m.edge_feat_dim},
               {"num_classes", m.num_classes},
               {"variant", cli::seq_model_name(m.seq_model)},
               {"t2v", m.use_t2v},
               {"t2v_terms", m.t2v_periodic_terms},
               {"hidden_dim", m.hidden_dim},
               {"attn_hidden_dim", m.attn_hidden_dim},
               {"gnn_layers", m.gnn_layers},
               {"lstm_layers", m.lstm_layers},
               {"transformer_layers", m.transformer_layers},
               {"transformer_heads", m.transformer_heads},
               {"attention", cli::attention_name(m.attention)},
               {"seq_cap", m.seq_cap}};
    return json{{"seed", cfg.seed},
                {"lr", cfg.lr},
                {"batch_size", cfg.batch_size},
                {"fanouts", cfg.fanouts},
                {"epochs", cfg.epochs},
                {"patience", cfg.patience},
                {"train_ratio", cfg.train_ratio},
                {"val_ratio", cfg.val_ratio},
                {"test_ratio", cfg.test_ratio},
                {"ablation", cfg.ablate_zero_edges ? "zero_edges" : "none"},
                {"model", std::move(model)}};
}

template <typename T>
T require(const json& j, const std::string& key, const std::string& context) {
    if (!j.contains(key)) {
        throw DataError(context + ": missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError(context + ": field '" + key + "' has the wrong type");
    }
}

TrainConfig config_from_json(const json& j) {
    TrainConfig cfg;
    const std::string ctx = "checkpoint config";
    cfg.seed = require<std::uint64_t>(j, "seed", ctx);
    cfg.lr = require<double>(j, "lr", ctx);
    cfg.batch_size = require<std::size_t>(j, "batch_size", ctx);
    cfg.fanouts = require<std::vector<std::size_t>>(j, "fanouts", ctx);
    cfg.epochs = require<std::size_t>(j, "epochs", ctx);
    cfg.patience = require<std::size_t>(j, "patience", ctx);
    cfg.train_ratio = require<double>(j, "train_ratio", ctx);
    cfg.val_ratio = require<double>(j, "val_ratio", ctx);
    cfg.test_ratio = require<double>(j, "test_ratio", ctx);
    cfg.ablate_zero_edges = require<std::string>(j, "ablation", ctx) == "zero_edges";
    const json& mj = j.at("model");
    const std::string mctx = "checkpoint model config";
    gnn::GteaConfig& m = cfg.model;
    m.node_feat_dim = require<std::size_t>(mj, "node_feat_dim", mctx);
    m.edge_feat_dim = require<std::size_t>(mj, "edge_feat_dim", mctx);
    m.num_classes = require<int>(mj, "num_classes", mctx);
    m.seq_model = cli::seq_model_from(require<std::string>(mj, "variant", mctx));
    m.use_t2v = require<bool>(mj, "t2v", mctx);
    m.t2v_periodic_terms = require<std::size_t>(mj, "t2v_terms", mctx);
    m.hidden_dim = require<std::size_t>(mj, "hidden_dim", mctx);
    m.attn_hidden_dim = require<std::size_t>(mj, "attn_hidden_dim", mctx);
    m.gnn_layers = require<std::size_t>(mj, "gnn_layers", mctx);
    m.lstm_layers = require<std::size_t>(mj, "lstm_layers", mctx);
    m.transformer_layers = require<std::size_t>(mj, "transformer_layers", mctx);
    m.transformer_heads = require<std::size_t>(mj, "transformer_heads", mctx);
    m.attention = cli::attention_from(require<std::string>(mj, "attention", mctx));
    m.seq_cap = require<std::size_t>(mj, "seq_cap", mctx);
    return cfg;
}

json history_to_json(const std::vector<EpochRecord>& history) {
    json out = json::array();
    for (const EpochRecord& r : history) {
        out.push_back(json{{"epoch", r.epoch},
                           {"train_loss", r.train_loss},
                           {"val_accuracy", r.val_accuracy},
                           {"val_macro_f1", r.val_macro_f1}});
    }
    return out;
}

std::vector<EpochRecord> history_from_json(const json& j) {
    std::vector<EpochRecord> out;
    for (const json& rj : j) {
        EpochRecord r;
        r.epoch = require<std::size_t>(rj, "epoch", "checkpoint history");
        r.train_loss = require<double>(rj, "train_loss", "checkpoint history");
        r.val_accuracy = require<double>(rj, "val_accuracy", "checkpoint history");
        r.val_macro_f1 = require<double>(rj, "val_macro_f1", "checkpoint history");
        out.push_back(r);
    }
    return out;
}

json metrics_to_json(const Metrics& m) {
    return json{{"accuracy", m.accuracy},     {"macro_f1", m.macro_f1},
                {"precision", m.precision},   {"recall", m.recall},
                {"f1", m.f1},                 {"confusion", m.confusion}};
}

void compare_field(const std::string& name, const std::string& got,
                   const std::string& want) {
    if (got != want) {
        throw DataError("checkpoint incompatible: field '" + name + "' is " + got +
                        ", expected " + want);
    }
}

}  // namespace

void save_checkpoint(const gnn::GteaModel<float>& model, const TrainConfig& config,
                     const std::vector<EpochRecord>& history, const std::string& path) {
    json j;
    j["format_version"] = kFormatVersion;
    j["config"] = config_to_json(config);
    json params = json::array();
    gnn::visit_params(model, [&](const std::string& name, const numerics::Tensor<float>& t) {
        params.push_back(json{{"name", name}, {"shape", t.shape()}, {"values", t.values()}});
    });
    j["params"] = std::move(params);
    j["history"] = history_to_json(history);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << j.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::string& path, const gnn::GteaConfig* expected) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint " + path + ": " + e.what());
    }
    const int version = require<int>(j, "format_version", "checkpoint");
    if (version != kFormatVersion) {
        throw DataError("checkpoint " + path + ": unsupported format_version " +
                        std::to_string(version) + " (this build reads version " +
                        std::to_string(kFormatVersion) + ")");
    }
    Checkpoint ckpt;
    ckpt.config = config_from_json(j.at("config"));

    if (expected) {
        const gnn::GteaConfig& a = ckpt.config.model;
        compare_field("variant", cli::seq_model_name(a.seq_model),
                      cli::seq_model_name(expected->seq_model));
        compare_field("t2v", a.use_t2v ? "true" : "false",
                      expected->use_t2v ? "true" : "false");
        compare_field("t2v_terms", std::to_string(a.t2v_periodic_terms),
                      std::to_string(expected->t2v_periodic_terms));
        compare_field("hidden_dim", std::to_string(a.hidden_dim),
                      std::to_string(expected->hidden_dim));
        compare_field("attn_hidden_dim", std::to_string(a.attn_hidden_dim),
                      std::to_string(expected->attn_hidden_dim));
        compare_field("gnn_layers", std::to_string(a.gnn_layers),
                      std::to_string(expected->gnn_layers));
        compare_field("node_feat_dim", std::to_string(a.node_feat_dim),
                      std::to_string(expected->node_feat_dim));
        compare_field("edge_feat_dim", std::to_string(a.edge_feat_dim),
                      std::to_string(expected->edge_feat_dim));
        compare_field("num_classes", std::to_string(a.num_classes),
                      std::to_string(expected->num_classes));
    }

    // Materialize a model of the declared architecture, then overwrite every
    // tensor from the stored values; shape disagreements name the parameter.
    Rng rng(0);
    ckpt.model = gnn::GteaModel<float>::init(ckpt.config.model, rng);
    std::map<std::string, const json*> stored;
    for (const json& pj : j.at("params")) {
        stored[require<std::string>(pj, "name", "checkpoint params")] = &pj;
    }
    std::size_t used = 0;
    gnn::visit_params(ckpt.model, [&](const std::string& name, numerics::Tensor<float>& t) {
        auto it = stored.find(name);
        if (it == stored.end()) {
            throw DataError("checkpoint " + path + ": missing parameter '" + name + "'");
        }
        const auto shape = require<std::vector<std::size_t>>(*it->second, "shape",
                                                             "parameter " + name);
        const auto values = require<std::vector<float>>(*it->second, "values",
                                                        "parameter " + name);
        if (shape != t.shape() || values.size() != t.size()) {
            throw DataError("checkpoint parameter '" + name + "' has shape " +
                            numerics::Tensor<float>::shape_string(shape) + ", expected " +
                            t.shape_string());
        }
        t = numerics::Tensor<float>(shape, values);
        ++used;
    });
    if (used != stored.size()) {
        throw DataError("checkpoint " + path + ": contains " +
                        std::to_string(stored.size()) + " parameters, model expects " +
                        std::to_string(used));
    }
    ckpt.history = history_from_json(j.at("history"));
    return ckpt;
}

std::string metrics_report_json(const TrainResult& result, const TrainConfig& config) {
    json j;
    j["format_version"] = kFormatVersion;
    j["config"] = config_to_json(config);
    j["best_epoch"] = result.best_epoch;
    j["diverged"] = result.diverged;
    j["history"] = history_to_json(result.history);
    j["test"] = metrics_to_json(result.test);
    j["test_attention_zero_fraction"] = result.test_attention.zero_fraction();
    return j.dump(1) + "\n";
}

std::string metrics_json(const Metrics& metrics) {
    json j;
    j["format_version"] = kFormatVersion;
    j["metrics"] = metrics_to_json(metrics);
    return j.dump(1) + "\n";
}

}  // namespace gtea::training
