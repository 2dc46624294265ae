#include "gtea/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace gtea::cli {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

long to_long(const std::string& key, const std::string& val) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
    if (ec != std::errc() || ptr != val.data() + val.size()) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + val + "'");
    }
    return v;
}

std::size_t to_size(const std::string& key, const std::string& val) {
    const long v = to_long(key, val);
    if (v < 0) throw ConfigError("config key '" + key + "': must be non-negative");
    return static_cast<std::size_t>(v);
}

double to_double(const std::string& key, const std::string& val) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
    if (ec != std::errc() || ptr != val.data() + val.size()) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + val + "'");
    }
    return v;
}

bool to_bool(const std::string& key, const std::string& val) {
    if (val == "true" || val == "1" || val == "on") return true;
    if (val == "false" || val == "0" || val == "off") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + val + "'");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& val) {
    std::vector<std::size_t> out;
    std::istringstream is(val);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(to_size(key, trim(item)));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

template <typename F>
void take(KvMap& kv, const std::string& key, F&& apply) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    apply(it->second);
    kv.erase(it);
}

}  // namespace

KvMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    KvMap kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        }
        if (!kv.emplace(key, val).second) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
        }
    }
    return kv;
}

std::string seq_model_name(encoders::SeqModelKind kind) {
    return kind == encoders::SeqModelKind::kLstm ? "lstm" : "transformer";
}

encoders::SeqModelKind seq_model_from(const std::string& name) {
    if (name == "lstm") return encoders::SeqModelKind::kLstm;
    if (name == "transformer") return encoders::SeqModelKind::kTransformer;
    throw ConfigError("unknown variant '" + name + "'; valid variants: lstm, transformer");
}

std::string attention_name(gnn::AttentionKind kind) {
    return kind == gnn::AttentionKind::kSparsemax ? "sparsemax" : "softmax";
}

gnn::AttentionKind attention_from(const std::string& name) {
    if (name == "sparsemax") return gnn::AttentionKind::kSparsemax;
    if (name == "softmax") return gnn::AttentionKind::kSoftmax;
    throw ConfigError("unknown attention '" + name +
                      "'; valid choices: sparsemax, softmax");
}

void apply_train_keys(training::TrainConfig& cfg, KvMap& kv) {
    take(kv, "seed", [&](const std::string& v) {
        cfg.seed = static_cast<std::uint64_t>(to_long("seed", v));
    });
    take(kv, "lr", [&](const std::string& v) { cfg.lr = to_double("lr", v); });
    take(kv, "batch_size",
         [&](const std::string& v) { cfg.batch_size = to_size("batch_size", v); });
    take(kv, "fanouts",
         [&](const std::string& v) { cfg.fanouts = to_size_list("fanouts", v); });
    take(kv, "epochs", [&](const std::string& v) { cfg.epochs = to_size("epochs", v); });
    take(kv, "patience", [&](const std::string& v) { cfg.patience = to_size("patience", v); });
    take(kv, "train_ratio",
         [&](const std::string& v) { cfg.train_ratio = to_double("train_ratio", v); });
    take(kv, "val_ratio",
         [&](const std::string& v) { cfg.val_ratio = to_double("val_ratio", v); });
    take(kv, "test_ratio",
         [&](const std::string& v) { cfg.test_ratio = to_double("test_ratio", v); });
    take(kv, "ablation", [&](const std::string& v) {
        if (v == "none") cfg.ablate_zero_edges = false;
        else if (v == "zero_edges") cfg.ablate_zero_edges = true;
        else throw ConfigError("config key 'ablation': expected none or zero_edges");
    });
    take(kv, "variant",
         [&](const std::string& v) { cfg.model.seq_model = seq_model_from(v); });
    take(kv, "t2v", [&](const std::string& v) { cfg.model.use_t2v = to_bool("t2v", v); });
    take(kv, "t2v_terms", [&](const std::string& v) {
        cfg.model.t2v_periodic_terms = to_size("t2v_terms", v);
    });
    take(kv, "hidden_dim",
         [&](const std::string& v) { cfg.model.hidden_dim = to_size("hidden_dim", v); });
    take(kv, "attn_hidden_dim", [&](const std::string& v) {
        cfg.model.attn_hidden_dim = to_size("attn_hidden_dim", v);
    });
    take(kv, "gnn_layers",
         [&](const std::string& v) { cfg.model.gnn_layers = to_size("gnn_layers", v); });
    take(kv, "lstm_layers",
         [&](const std::string& v) { cfg.model.lstm_layers = to_size("lstm_layers", v); });
    take(kv, "transformer_layers", [&](const std::string& v) {
        cfg.model.transformer_layers = to_size("transformer_layers", v);
    });
    take(kv, "transformer_heads", [&](const std::string& v) {
        cfg.model.transformer_heads = to_size("transformer_heads", v);
    });
    take(kv, "attention",
         [&](const std::string& v) { cfg.model.attention = attention_from(v); });
    take(kv, "seq_cap",
         [&](const std::string& v) { cfg.model.seq_cap = to_size("seq_cap", v); });
}

void apply_gen_keys(graph::GenSpec& spec, KvMap& kv) {
    take(kv, "nodes", [&](const std::string& v) { spec.num_nodes = to_size("nodes", v); });
    take(kv, "classes", [&](const std::string& v) {
        spec.num_classes = static_cast<int>(to_long("classes", v));
    });
    take(kv, "avg_degree",
         [&](const std::string& v) { spec.avg_degree = to_double("avg_degree", v); });
    take(kv, "pattern_neighbors", [&](const std::string& v) {
        spec.pattern_neighbors = to_size("pattern_neighbors", v);
    });
    take(kv, "period", [&](const std::string& v) { spec.period = to_double("period", v); });
    take(kv, "amplitude",
         [&](const std::string& v) { spec.amplitude = to_double("amplitude", v); });
    take(kv, "noise", [&](const std::string& v) { spec.noise = to_double("noise", v); });
    take(kv, "time_span",
         [&](const std::string& v) { spec.time_span = to_double("time_span", v); });
    take(kv, "mean_events",
         [&](const std::string& v) { spec.mean_events = to_double("mean_events", v); });
    take(kv, "node_feat_dim",
         [&](const std::string& v) { spec.node_feat_dim = to_size("node_feat_dim", v); });
    take(kv, "edge_feat_dim",
         [&](const std::string& v) { spec.edge_feat_dim = to_size("edge_feat_dim", v); });
}

void reject_unknown(const KvMap& leftover, const std::string& context) {
    if (leftover.empty()) return;
    std::string keys;
    for (const auto& [k, v] : leftover) {
        if (!keys.empty()) keys += ", ";
        keys += "'" + k + "'";
    }
    throw ConfigError(context + ": unknown config keys: " + keys);
}

std::string render_train_config(const training::TrainConfig& cfg) {
    std::ostringstream os;
    os << "seed = " << cfg.seed << '\n';
    os << "lr = " << cfg.lr << '\n';
    os << "batch_size = " << cfg.batch_size << '\n';
    os << "fanouts = ";
    for (std::size_t i = 0; i < cfg.fanouts.size(); ++i) {
        if (i) os << ',';
        os << cfg.fanouts[i];
    }
    os << '\n';
    os << "epochs = " << cfg.epochs << '\n';
    os << "patience = " << cfg.patience << '\n';
    os << "train_ratio = " << cfg.train_ratio << '\n';
    os << "val_ratio = " << cfg.val_ratio << '\n';
    os << "test_ratio = " << cfg.test_ratio << '\n';
    os << "ablation = " << (cfg.ablate_zero_edges ? "zero_edges" : "none") << '\n';
    os << "variant = " << seq_model_name(cfg.model.seq_model) << '\n';
    os << "t2v = " << (cfg.model.use_t2v ? "true" : "false") << '\n';
    os << "t2v_terms = " << cfg.model.t2v_periodic_terms << '\n';
    os << "hidden_dim = " << cfg.model.hidden_dim << '\n';
    os << "attn_hidden_dim = " << cfg.model.attn_hidden_dim << '\n';
    os << "gnn_layers = " << cfg.model.gnn_layers << '\n';
    os << "lstm_layers = " << cfg.model.lstm_layers << '\n';
    os << "transformer_layers = " << cfg.model.transformer_layers << '\n';
    os << "transformer_heads = " << cfg.model.transformer_heads << '\n';
    os << "attention = " << attention_name(cfg.model.attention) << '\n';
    os << "seq_cap = " << cfg.model.seq_cap << '\n';
    return os.str();
}

std::string render_gen_spec(const graph::GenSpec& spec) {
    std::ostringstream os;
    os << "nodes = " << spec.num_nodes << '\n';
    os << "classes = " << spec.num_classes << '\n';
    os << "avg_degree = " << spec.avg_degree << '\n';
    os << "pattern_neighbors = " << spec.pattern_neighbors << '\n';
    os << "period = " << spec.period << '\n';
    os << "amplitude = " << spec.amplitude << '\n';
    os << "noise = " << spec.noise << '\n';
    os << "time_span = " << spec.time_span << '\n';
    os << "mean_events = " << spec.mean_events << '\n';
    os << "node_feat_dim = " << spec.node_feat_dim << '\n';
    os << "edge_feat_dim = " << spec.edge_feat_dim << '\n';
    return os.str();
}

}  // namespace gtea::cli
