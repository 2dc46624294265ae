// gtea: synthetic temporal-graph generation, training, evaluation and
// embedding export for the GTEA node-classification model.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gtea/config.hpp"
#include "gtea/gnn.hpp"
#include "gtea/graph.hpp"
#include "gtea/synthetic.hpp"
#include "gtea/training.hpp"

namespace fs = std::filesystem;
using gtea::cli::KvMap;

namespace {

constexpr const char* kTrainKeys[] = {
    "seed",        "lr",          "batch_size",       "fanouts",
    "epochs",      "patience",    "train_ratio",      "val_ratio",
    "test_ratio",  "ablation",    "variant",          "t2v",
    "t2v_terms",   "hidden_dim",  "attn_hidden_dim",  "gnn_layers",
    "lstm_layers", "transformer_layers", "transformer_heads", "attention",
    "seq_cap"};

constexpr const char* kGenKeys[] = {"seed",       "nodes",        "classes",
                                    "avg_degree", "pattern_neighbors", "period",
                                    "amplitude",  "noise",        "time_span",
                                    "mean_events", "node_feat_dim", "edge_feat_dim"};

struct CommonArgs {
    std::string config_path;
    KvMap overrides;
    std::string out_dir;

    KvMap resolve() const {
        KvMap kv;
        if (!config_path.empty()) kv = gtea::cli::parse_config_file(config_path);
        for (const auto& [k, v] : overrides) kv[k] = v;  // flags win
        return kv;
    }
};

template <std::size_t N>
void add_override_flags(CLI::App* cmd, CommonArgs& args, const char* const (&keys)[N]) {
    cmd->add_option("--config", args.config_path, "flat key=value config file");
    cmd->add_option("--out", args.out_dir, "output directory");
    for (const char* key : keys) {
        const std::string name = std::string("--") + key;
        cmd->add_option_function<std::string>(
            name, [&args, key](const std::string& v) { args.overrides[key] = v; });
    }
}

void take_path(KvMap& kv, const std::string& key, std::string& dst) {
    auto it = kv.find(key);
    if (it != kv.end()) {
        if (dst.empty()) dst = it->second;
        kv.erase(it);
    }
}

fs::path prepare_out_dir(const std::string& out) {
    if (out.empty()) throw gtea::ConfigError("missing output directory (--out)");
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw gtea::DataError("cannot create output directory " + out + ": " + ec.message());
    return dir;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw gtea::DataError("cannot write " + path.string());
    out << content;
}

std::uint64_t take_seed(KvMap& kv, std::uint64_t fallback) {
    auto it = kv.find("seed");
    if (it == kv.end()) return fallback;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc() || p != it->second.data() + it->second.size()) {
        throw gtea::ConfigError("config key 'seed': expected an integer");
    }
    kv.erase(it);
    return v;
}

int cmd_synth(CommonArgs& args) {
    KvMap kv = args.resolve();
    const std::uint64_t seed = take_seed(kv, 1);
    gtea::graph::GenSpec spec;
    gtea::cli::apply_gen_keys(spec, kv);
    gtea::cli::reject_unknown(kv, "synth");

    const fs::path dir = prepare_out_dir(args.out_dir);
    gtea::Rng rng(seed);
    gtea::graph::TemporalGraph g = gtea::graph::generate_synthetic(spec, rng);
    gtea::graph::save_graph(g, (dir / "nodes.csv").string(), (dir / "events.csv").string());

    std::size_t interactions = 0;
    for (const auto& e : g.edges) interactions += e.length();
    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["spec"] = nlohmann::json{{"nodes", spec.num_nodes},
                                      {"classes", spec.num_classes},
                                      {"avg_degree", spec.avg_degree},
                                      {"pattern_neighbors", spec.pattern_neighbors},
                                      {"period", spec.period},
                                      {"amplitude", spec.amplitude},
                                      {"noise", spec.noise},
                                      {"time_span", spec.time_span},
                                      {"mean_events", spec.mean_events},
                                      {"node_feat_dim", spec.node_feat_dim},
                                      {"edge_feat_dim", spec.edge_feat_dim}};
    manifest["num_nodes"] = g.num_nodes;
    manifest["num_edges"] = g.edges.size();
    manifest["num_interactions"] = interactions;
    write_file(dir / "manifest.json", manifest.dump(1) + "\n");

    std::cout << "synth: " << g.num_nodes << " nodes, " << g.edges.size() << " edges, "
              << interactions << " interactions -> " << dir.string() << "\n";
    return 0;
}

int cmd_train(CommonArgs& args) {
    KvMap kv = args.resolve();
    std::string nodes_path, events_path;
    take_path(kv, "nodes", nodes_path);
    take_path(kv, "events", events_path);
    gtea::training::TrainConfig cfg;
    cfg.seed = take_seed(kv, cfg.seed);
    gtea::cli::apply_train_keys(cfg, kv);
    gtea::cli::reject_unknown(kv, "train");
    if (nodes_path.empty() || events_path.empty()) {
        throw gtea::ConfigError("train: both 'nodes' and 'events' paths are required");
    }

    const fs::path dir = prepare_out_dir(args.out_dir);
    gtea::graph::TemporalGraph g = gtea::graph::load_graph(nodes_path, events_path);
    cfg.model.node_feat_dim = g.node_feat_dim;
    cfg.model.edge_feat_dim = g.edge_feat_dim;
    cfg.model.num_classes = g.num_classes;
    cfg.validate();

    write_file(dir / "config_resolved.cfg", gtea::cli::render_train_config(cfg));
    gtea::training::TrainResult result = gtea::training::train(g, cfg);
    gtea::training::save_checkpoint(result.model, cfg, result.history,
                                    (dir / "checkpoint.json").string());
    write_file(dir / "metrics.json", gtea::training::metrics_report_json(result, cfg));

    std::cout << "train: " << result.history.size() << " epochs (best "
              << result.best_epoch << "), test accuracy " << result.test.accuracy
              << ", test macro-F1 " << result.test.macro_f1;
    if (result.diverged) std::cout << " [diverged; best checkpoint kept]";
    std::cout << "\n";
    return 0;
}

int cmd_eval(CommonArgs& args, const std::string& checkpoint_flag, std::string split) {
    KvMap kv = args.resolve();
    std::string nodes_path, events_path, checkpoint_path = checkpoint_flag;
    take_path(kv, "nodes", nodes_path);
    take_path(kv, "events", events_path);
    take_path(kv, "checkpoint", checkpoint_path);
    take_path(kv, "split", split);
    gtea::cli::reject_unknown(kv, "eval");
    if (checkpoint_path.empty()) throw gtea::ConfigError("eval: missing --checkpoint");
    if (nodes_path.empty() || events_path.empty()) {
        throw gtea::ConfigError("eval: both 'nodes' and 'events' paths are required");
    }

    gtea::graph::TemporalGraph g = gtea::graph::load_graph(nodes_path, events_path);
    gtea::training::Checkpoint ckpt = gtea::training::load_checkpoint(checkpoint_path);
    gtea::gnn::check_config_against_graph(ckpt.config.model, g);

    std::vector<gtea::graph::NodeId> nodes;
    if (split == "all") {
        nodes = g.labeled_nodes();
    } else {
        gtea::training::TrainConfig& cfg = ckpt.config;
        auto sp = gtea::training::dataset_split_for(g, cfg);
        if (split == "train") nodes = sp.train;
        else if (split == "val") nodes = sp.val;
        else if (split == "test") nodes = sp.test;
        else throw gtea::ConfigError("eval: --split must be train, val, test or all");
    }

    gtea::gnn::ForwardStats stats;
    gtea::training::Metrics metrics = gtea::training::evaluate(
        ckpt.model, g, nodes, ckpt.config, gtea::derive_seed(ckpt.config.seed, 0x6576616cULL),
        &stats);

    std::ostringstream line;
    line << "eval[" << split << "]: " << nodes.size() << " nodes, accuracy "
         << metrics.accuracy << ", macro-F1 " << metrics.macro_f1
         << ", zero-attention fraction " << stats.zero_fraction() << "\n";
    std::cout << line.str();
    if (!args.out_dir.empty()) {
        const fs::path dir = prepare_out_dir(args.out_dir);
        write_file(dir / "metrics_eval.json", gtea::training::metrics_json(metrics));
    }
    return 0;
}

std::vector<gtea::graph::NodeId> parse_id_list(const std::string& text) {
    std::vector<gtea::graph::NodeId> out;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        long v = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || p != item.data() + item.size()) {
            throw gtea::ConfigError("bad node id '" + item + "'");
        }
        out.push_back(static_cast<gtea::graph::NodeId>(v));
    }
    return out;
}

std::string format_value(float v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

int cmd_embed(CommonArgs& args, const std::string& checkpoint_flag,
              const std::string& node_list, const std::string& edge_list) {
    KvMap kv = args.resolve();
    std::string nodes_path, events_path, checkpoint_path = checkpoint_flag;
    take_path(kv, "nodes", nodes_path);
    take_path(kv, "events", events_path);
    take_path(kv, "checkpoint", checkpoint_path);
    gtea::cli::reject_unknown(kv, "embed");
    if (checkpoint_path.empty()) throw gtea::ConfigError("embed: missing --checkpoint");
    if (nodes_path.empty() || events_path.empty()) {
        throw gtea::ConfigError("embed: both 'nodes' and 'events' paths are required");
    }

    gtea::graph::TemporalGraph g = gtea::graph::load_graph(nodes_path, events_path);
    gtea::training::Checkpoint ckpt = gtea::training::load_checkpoint(checkpoint_path);
    gtea::gnn::check_config_against_graph(ckpt.config.model, g);
    const fs::path dir = prepare_out_dir(args.out_dir);

    // Requested nodes (default: all), ascending and unique.
    std::vector<gtea::graph::NodeId> want_nodes;
    if (node_list.empty()) {
        for (std::size_t u = 0; u < g.num_nodes; ++u) {
            want_nodes.push_back(static_cast<gtea::graph::NodeId>(u));
        }
    } else {
        want_nodes = parse_id_list(node_list);
        std::sort(want_nodes.begin(), want_nodes.end());
        want_nodes.erase(std::unique(want_nodes.begin(), want_nodes.end()), want_nodes.end());
        for (auto u : want_nodes) {
            if (u < 0 || static_cast<std::size_t>(u) >= g.num_nodes) {
                throw gtea::DataError("embed: unknown node id " + std::to_string(u));
            }
        }
    }

    // Node embeddings are the layer-L outputs (logit rows).
    std::ostringstream nodes_csv;
    nodes_csv << "node_id";
    for (int j = 0; j < ckpt.config.model.num_classes; ++j) nodes_csv << ",emb_" << j;
    nodes_csv << '\n';
    const std::uint64_t stream = gtea::derive_seed(ckpt.config.seed, 0x656d626564ULL);
    std::size_t done = 0, batch_index = 0;
    while (done < want_nodes.size()) {
        const std::size_t take = std::min(ckpt.config.batch_size, want_nodes.size() - done);
        std::vector<gtea::graph::NodeId> chunk(want_nodes.begin() + done,
                                               want_nodes.begin() + done + take);
        gtea::Rng rng(gtea::derive_seed(stream, 0x6261746368ULL, batch_index));
        auto batch = gtea::graph::make_minibatch(g, chunk, ckpt.config.model.gnn_layers,
                                                 ckpt.config.fanouts, rng);
        gtea::numerics::Tape<float> tape;
        gtea::gnn::Binder<float> binder(tape);
        auto vars = gtea::gnn::bind(binder, ckpt.model);
        gtea::gnn::ForwardOptions opts;
        opts.zero_edges = ckpt.config.ablate_zero_edges;
        auto logits = gtea::gnn::forward(tape, batch, g, vars, ckpt.config.model, opts);
        const auto& lv = logits.value();
        for (std::size_t i = 0; i < batch.seeds.size(); ++i) {
            nodes_csv << batch.seeds[i];
            for (std::size_t j = 0; j < lv.dim(1); ++j) {
                nodes_csv << ',' << format_value(lv.at(i, j));
            }
            nodes_csv << '\n';
        }
        done += take;
        ++batch_index;
    }
    write_file(dir / "node_embeddings.csv", nodes_csv.str());

    // Edge embeddings: canonical pairs, one encoder pass each.
    std::vector<gtea::graph::EdgeId> want_edges;
    if (edge_list.empty()) {
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            want_edges.push_back(static_cast<gtea::graph::EdgeId>(e));
        }
    } else {
        std::istringstream is(edge_list);
        std::string item;
        while (std::getline(is, item, ',')) {
            const auto dash = item.find('-');
            if (dash == std::string::npos) {
                throw gtea::ConfigError("bad edge spec '" + item + "'; expected u-v");
            }
            const auto us = parse_id_list(item.substr(0, dash));
            const auto vs = parse_id_list(item.substr(dash + 1));
            if (us.size() != 1 || vs.size() != 1) {
                throw gtea::ConfigError("bad edge spec '" + item + "'");
            }
            if (us[0] < 0 || static_cast<std::size_t>(us[0]) >= g.num_nodes || vs[0] < 0 ||
                static_cast<std::size_t>(vs[0]) >= g.num_nodes) {
                throw gtea::DataError("embed: unknown node id in edge spec '" + item + "'");
            }
            const gtea::graph::EdgeId e = g.find_edge(us[0], vs[0]);
            if (e < 0) throw gtea::DataError("embed: no edge between " + item);
            want_edges.push_back(e);
        }
        std::sort(want_edges.begin(), want_edges.end());
        want_edges.erase(std::unique(want_edges.begin(), want_edges.end()), want_edges.end());
    }

    std::ostringstream edges_csv;
    edges_csv << "u,v";
    for (std::size_t j = 0; j < ckpt.config.model.hidden_dim; ++j) edges_csv << ",emb_" << j;
    edges_csv << '\n';
    {
        gtea::numerics::Tape<float> tape;
        gtea::gnn::Binder<float> binder(tape);
        auto vars = gtea::gnn::bind(binder, ckpt.model);
        const auto spec = ckpt.config.model.event_spec(ckpt.config.ablate_zero_edges);
        const auto* t2v_vars = vars.t2v ? &*vars.t2v : nullptr;
        for (gtea::graph::EdgeId e : want_edges) {
            const auto& seq = g.edges[e];
            gtea::numerics::Var<float> emb;
            if (ckpt.config.model.seq_model == gtea::encoders::SeqModelKind::kLstm) {
                auto inputs = gtea::encoders::build_event_inputs(tape, seq, g, spec, t2v_vars);
                emb = gtea::encoders::lstm_encode(
                    tape, std::span<const gtea::numerics::Var<float>>(inputs),
                    std::get<gtea::encoders::LstmVars<float>>(vars.edge_encoder));
            } else {
                auto events = gtea::encoders::build_event_matrix(tape, seq, g, spec, t2v_vars);
                emb = gtea::encoders::transformer_encode(
                    events, std::get<gtea::encoders::TransformerVars<float>>(vars.edge_encoder));
            }
            const auto& ev = emb.value();
            edges_csv << seq.pair.first << ',' << seq.pair.second;
            for (std::size_t j = 0; j < ev.size(); ++j) edges_csv << ',' << format_value(ev[j]);
            edges_csv << '\n';
        }
    }
    write_file(dir / "edge_embeddings.csv", edges_csv.str());

    std::cout << "embed: " << want_nodes.size() << " nodes, " << want_edges.size()
              << " edges -> " << dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GTEA: temporal interaction graph representation learning"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, eval_args, embed_args;
    std::string eval_checkpoint, eval_split = "test";
    std::string embed_checkpoint, embed_nodes, embed_edges;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_override_flags(synth, synth_args, kGenKeys);

    CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
    add_override_flags(train, train_args, kTrainKeys);
    train->add_option_function<std::string>(
        "--nodes", [&](const std::string& v) { train_args.overrides["nodes"] = v; });
    train->add_option_function<std::string>(
        "--events", [&](const std::string& v) { train_args.overrides["events"] = v; });

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--config", eval_args.config_path);
    eval->add_option("--out", eval_args.out_dir);
    eval->add_option("--checkpoint", eval_checkpoint);
    eval->add_option("--split", eval_split, "train | val | test | all");
    eval->add_option_function<std::string>(
        "--nodes", [&](const std::string& v) { eval_args.overrides["nodes"] = v; });
    eval->add_option_function<std::string>(
        "--events", [&](const std::string& v) { eval_args.overrides["events"] = v; });

    CLI::App* embed = app.add_subcommand("embed", "export node and edge embeddings");
    embed->add_option("--config", embed_args.config_path);
    embed->add_option("--out", embed_args.out_dir);
    embed->add_option("--checkpoint", embed_checkpoint);
    embed->add_option("--node-ids", embed_nodes, "comma-separated node ids (default: all)");
    embed->add_option("--edge-pairs", embed_edges, "comma-separated u-v pairs (default: all)");
    embed->add_option_function<std::string>(
        "--nodes", [&](const std::string& v) { embed_args.overrides["nodes"] = v; });
    embed->add_option_function<std::string>(
        "--events", [&](const std::string& v) { embed_args.overrides["events"] = v; });

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(synth_args);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args, eval_checkpoint, eval_split);
        if (embed->parsed()) return cmd_embed(embed_args, embed_checkpoint, embed_nodes,
                                              embed_edges);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const gtea::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const gtea::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const gtea::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
