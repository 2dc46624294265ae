#include "gtea/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace gtea::graph {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& file, std::size_t lineno) {
    double v = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) {
        throw DataError(file + ":" + std::to_string(lineno) + ": not a number: '" + s + "'");
    }
    return v;
}

long parse_int(const std::string& s, const std::string& file, std::size_t lineno) {
    long v = 0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) {
        throw DataError(file + ":" + std::to_string(lineno) + ": not an integer: '" + s + "'");
    }
    return v;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

void expect_header(const std::vector<std::string>& fields, const std::string& file,
                   const std::vector<std::string>& fixed, const std::string& feat_prefix) {
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        if (i >= fields.size() || fields[i] != fixed[i]) {
            throw DataError(file + ":1: expected header column '" + fixed[i] + "', got '" +
                            (i < fields.size() ? fields[i] : "") + "'");
        }
    }
    for (std::size_t i = fixed.size(); i < fields.size(); ++i) {
        const std::string want = feat_prefix + std::to_string(i - fixed.size());
        if (fields[i] != want) {
            throw DataError(file + ":1: expected header column '" + want + "', got '" +
                            fields[i] + "'");
        }
    }
}

// Fisher-Yates partial shuffle of the first `take` positions.
template <typename V>
void partial_shuffle(V& items, std::size_t take, Rng& rng) {
    const std::size_t n = items.size();
    for (std::size_t i = 0; i < take && i + 1 < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(items[i], items[pick(rng)]);
    }
}

}  // namespace

EdgeId TemporalGraph::find_edge(NodeId u, NodeId v) const {
    const auto& nbrs = adjacency[static_cast<std::size_t>(u)];
    auto it = std::lower_bound(nbrs.begin(), nbrs.end(), v,
                               [](const std::pair<NodeId, EdgeId>& e, NodeId id) {
                                   return e.first < id;
                               });
    if (it != nbrs.end() && it->first == v) return it->second;
    return -1;
}

std::vector<EdgeSequence> build_edge_sequences(const std::vector<RawEvent>& events) {
    std::map<std::pair<NodeId, NodeId>, std::size_t> index;
    std::vector<EdgeSequence> sequences;
    for (const RawEvent& ev : events) {
        if (ev.t < 0.0 || !std::isfinite(ev.t)) {
            throw DataError("event (" + std::to_string(ev.src) + "," + std::to_string(ev.dst) +
                            "): timestamp must be finite and non-negative, got " +
                            format_double(ev.t));
        }
        if (ev.src == ev.dst) {
            throw DataError("event at node " + std::to_string(ev.src) +
                            ": self-interactions are not supported");
        }
        const std::pair<NodeId, NodeId> key{std::min(ev.src, ev.dst), std::max(ev.src, ev.dst)};
        auto [it, inserted] = index.emplace(key, sequences.size());
        if (inserted) sequences.push_back(EdgeSequence{key, {}});
        EventRecord rec;
        rec.u = ev.src;
        rec.v = ev.dst;
        rec.t = ev.t;
        rec.features = ev.features;
        rec.dir = (ev.src == key.first) ? +1 : -1;
        sequences[it->second].events.push_back(std::move(rec));
    }
    for (EdgeSequence& seq : sequences) {
        std::stable_sort(seq.events.begin(), seq.events.end(),
                         [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });
    }
    return sequences;
}

TemporalGraph load_graph(const std::string& nodes_path, const std::string& events_path) {
    TemporalGraph g;

    std::ifstream nf(nodes_path);
    if (!nf) throw DataError("cannot open nodes file: " + nodes_path);
    std::string line;
    if (!std::getline(nf, line)) throw DataError(nodes_path + ": empty file");
    auto header = split_csv_line(line);
    if (header.size() < 2) throw DataError(nodes_path + ":1: header too short");
    expect_header(header, nodes_path, {"node_id", "label"}, "feat_");
    g.node_feat_dim = header.size() - 2;

    std::vector<std::vector<double>> feats;
    std::vector<int> labels;
    std::vector<long> ids;
    std::size_t lineno = 1;
    while (std::getline(nf, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw DataError(nodes_path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        }
        ids.push_back(parse_int(fields[0], nodes_path, lineno));
        if (fields[1].empty()) {
            labels.push_back(kUnlabeled);
        } else {
            const long lab = parse_int(fields[1], nodes_path, lineno);
            if (lab < 0) {
                throw DataError(nodes_path + ":" + std::to_string(lineno) +
                                ": label must be non-negative, got " + fields[1]);
            }
            labels.push_back(static_cast<int>(lab));
        }
        std::vector<double> fv(g.node_feat_dim);
        for (std::size_t i = 0; i < g.node_feat_dim; ++i) {
            fv[i] = parse_double(fields[2 + i], nodes_path, lineno);
        }
        feats.push_back(std::move(fv));
    }
    const std::size_t n = ids.size();
    if (n == 0) throw DataError(nodes_path + ": no node rows");
    g.num_nodes = n;
    g.node_features.assign(n, {});
    g.labels.assign(n, kUnlabeled);
    std::vector<bool> seen(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= n || seen[ids[i]]) {
            throw DataError(nodes_path + ": node ids must be unique and dense in [0, " +
                            std::to_string(n) + "); bad id " + std::to_string(ids[i]));
        }
        seen[ids[i]] = true;
        g.node_features[ids[i]] = std::move(feats[i]);
        g.labels[ids[i]] = labels[i];
    }
    int max_label = -1;
    for (int lab : g.labels) max_label = std::max(max_label, lab);
    g.num_classes = max_label + 1;

    std::ifstream ef(events_path);
    if (!ef) throw DataError("cannot open events file: " + events_path);
    if (!std::getline(ef, line)) throw DataError(events_path + ": empty file");
    auto eheader = split_csv_line(line);
    if (eheader.size() < 3) throw DataError(events_path + ":1: header too short");
    expect_header(eheader, events_path, {"src", "dst", "timestamp"}, "efeat_");
    g.edge_feat_dim = eheader.size() - 3;

    std::vector<RawEvent> raw;
    lineno = 1;
    while (std::getline(ef, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != eheader.size()) {
            throw DataError(events_path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(eheader.size()) + " fields, got " +
                            std::to_string(fields.size()));
        }
        RawEvent ev;
        const long src = parse_int(fields[0], events_path, lineno);
        const long dst = parse_int(fields[1], events_path, lineno);
        if (src < 0 || static_cast<std::size_t>(src) >= n || dst < 0 ||
            static_cast<std::size_t>(dst) >= n) {
            throw DataError(events_path + ":" + std::to_string(lineno) +
                            ": event references unknown node (" + fields[0] + "," + fields[1] +
                            ")");
        }
        ev.src = static_cast<NodeId>(src);
        ev.dst = static_cast<NodeId>(dst);
        ev.t = parse_double(fields[2], events_path, lineno);
        if (ev.t < 0.0) {
            throw DataError(events_path + ":" + std::to_string(lineno) +
                            ": negative timestamp " + fields[2]);
        }
        ev.features.resize(g.edge_feat_dim);
        for (std::size_t i = 0; i < g.edge_feat_dim; ++i) {
            ev.features[i] = parse_double(fields[3 + i], events_path, lineno);
        }
        raw.push_back(std::move(ev));
    }
    if (raw.empty()) throw DataError(events_path + ": no event rows");

    g.edges = build_edge_sequences(raw);
    g.adjacency.assign(n, {});
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto [a, b] = g.edges[e].pair;
        g.adjacency[a].emplace_back(b, static_cast<EdgeId>(e));
        g.adjacency[b].emplace_back(a, static_cast<EdgeId>(e));
    }
    for (auto& nbrs : g.adjacency) std::sort(nbrs.begin(), nbrs.end());

    g.t_min = raw[0].t;
    g.t_max = raw[0].t;
    for (const RawEvent& ev : raw) {
        g.t_min = std::min(g.t_min, ev.t);
        g.t_max = std::max(g.t_max, ev.t);
    }
    return g;
}

void save_graph(const TemporalGraph& graph, const std::string& nodes_path,
                const std::string& events_path) {
    std::ofstream nf(nodes_path);
    if (!nf) throw DataError("cannot write nodes file: " + nodes_path);
    nf << "node_id,label";
    for (std::size_t i = 0; i < graph.node_feat_dim; ++i) nf << ",feat_" << i;
    nf << '\n';
    for (std::size_t u = 0; u < graph.num_nodes; ++u) {
        nf << u << ',';
        if (graph.labels[u] != kUnlabeled) nf << graph.labels[u];
        for (double v : graph.node_features[u]) nf << ',' << format_double(v);
        nf << '\n';
    }

    std::ofstream ef(events_path);
    if (!ef) throw DataError("cannot write events file: " + events_path);
    ef << "src,dst,timestamp";
    for (std::size_t i = 0; i < graph.edge_feat_dim; ++i) ef << ",efeat_" << i;
    ef << '\n';
    for (const EdgeSequence& seq : graph.edges) {
        for (const EventRecord& ev : seq.events) {
            ef << ev.u << ',' << ev.v << ',' << format_double(ev.t);
            for (double v : ev.features) ef << ',' << format_double(v);
            ef << '\n';
        }
    }
}

std::vector<std::pair<NodeId, EdgeId>> sample_neighbors(const TemporalGraph& graph, NodeId u,
                                                        std::size_t fanout, Rng& rng) {
    if (u < 0 || static_cast<std::size_t>(u) >= graph.num_nodes) {
        throw DataError("sample_neighbors: unknown node " + std::to_string(u));
    }
    if (fanout == 0) throw ConfigError("sample_neighbors: fanout must be >= 1");
    const auto& nbrs = graph.adjacency[static_cast<std::size_t>(u)];
    if (nbrs.size() <= fanout) return nbrs;
    std::vector<std::pair<NodeId, EdgeId>> pool = nbrs;
    partial_shuffle(pool, fanout, rng);
    pool.resize(fanout);
    std::sort(pool.begin(), pool.end());
    return pool;
}

MiniBatch make_minibatch(const TemporalGraph& graph, const std::vector<NodeId>& seeds,
                         std::size_t num_layers, const std::vector<std::size_t>& fanouts,
                         Rng& rng) {
    if (seeds.empty()) throw DataError("make_minibatch: empty seed set");
    if (num_layers < 1 || num_layers > fanouts.size()) {
        throw ConfigError("make_minibatch: need 1 <= layers <= fanouts (" +
                          std::to_string(num_layers) + " vs " +
                          std::to_string(fanouts.size()) + ")");
    }
    for (NodeId s : seeds) {
        if (s < 0 || static_cast<std::size_t>(s) >= graph.num_nodes) {
            throw DataError("make_minibatch: unknown seed node " + std::to_string(s));
        }
    }

    MiniBatch batch;
    batch.seeds = seeds;
    std::sort(batch.seeds.begin(), batch.seeds.end());
    batch.seeds.erase(std::unique(batch.seeds.begin(), batch.seeds.end()), batch.seeds.end());

    // Expand top-down: depth k targets need depth k-1 embeddings of their
    // sampled neighbors, so each lower level is a superset union.
    std::vector<std::vector<NodeId>> level_nodes(num_layers + 1);
    level_nodes[num_layers] = batch.seeds;
    std::vector<std::vector<std::vector<std::pair<NodeId, EdgeId>>>> sampled(num_layers);
    for (std::size_t k = num_layers; k >= 1; --k) {
        const auto& targets = level_nodes[k];
        auto& layer_samples = sampled[k - 1];
        layer_samples.reserve(targets.size());
        std::set<NodeId> below(targets.begin(), targets.end());
        for (NodeId u : targets) {
            auto nbrs = sample_neighbors(graph, u, fanouts[k - 1], rng);
            for (const auto& [v, e] : nbrs) below.insert(v);
            layer_samples.push_back(std::move(nbrs));
        }
        level_nodes[k - 1].assign(below.begin(), below.end());
    }
    batch.input_nodes = level_nodes[0];

    std::set<EdgeId> edge_set;
    for (const auto& layer : sampled) {
        for (const auto& nbrs : layer) {
            for (const auto& [v, e] : nbrs) edge_set.insert(e);
        }
    }
    batch.edge_ids.assign(edge_set.begin(), edge_set.end());

    auto position_in = [](const std::vector<NodeId>& sorted, NodeId id) {
        return static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), id) -
                                sorted.begin());
    };
    auto edge_position = [&](EdgeId e) {
        return static_cast<int>(std::lower_bound(batch.edge_ids.begin(), batch.edge_ids.end(),
                                                 e) -
                                batch.edge_ids.begin());
    };

    batch.layers.resize(num_layers);
    for (std::size_t k = 1; k <= num_layers; ++k) {
        const auto& prev = level_nodes[k - 1];
        auto& layer = batch.layers[k - 1];
        const auto& targets = level_nodes[k];
        layer.targets.resize(targets.size());
        for (std::size_t i = 0; i < targets.size(); ++i) {
            MiniBatch::Target& t = layer.targets[i];
            t.node = targets[i];
            t.self_row = position_in(prev, targets[i]);
            for (const auto& [v, e] : sampled[k - 1][i]) {
                t.nbr_ids.push_back(v);
                t.nbr_rows.push_back(position_in(prev, v));
                t.edge_cols.push_back(edge_position(e));
            }
        }
    }
    return batch;
}

DatasetSplit split_dataset(const TemporalGraph& graph, double train_ratio, double val_ratio,
                           double test_ratio, Rng& rng) {
    if (train_ratio <= 0 || val_ratio <= 0 || test_ratio <= 0 ||
        std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
        throw ConfigError("split_dataset: ratios must be positive and sum to 1");
    }
    std::map<int, std::vector<NodeId>> by_class;
    for (std::size_t u = 0; u < graph.num_nodes; ++u) {
        if (graph.labels[u] != kUnlabeled) {
            by_class[graph.labels[u]].push_back(static_cast<NodeId>(u));
        }
    }
    if (by_class.empty()) throw DataError("split_dataset: graph has no labeled nodes");

    DatasetSplit split;
    for (auto& [cls, members] : by_class) {
        if (members.size() < 3) {
            throw DataError("split_dataset: class " + std::to_string(cls) + " has only " +
                            std::to_string(members.size()) +
                            " labeled nodes; merge or drop this class");
        }
        partial_shuffle(members, members.size(), rng);
        const std::size_t n_val = static_cast<std::size_t>(
            std::floor(val_ratio * static_cast<double>(members.size())));
        const std::size_t n_test = static_cast<std::size_t>(
            std::floor(test_ratio * static_cast<double>(members.size())));
        const std::size_t n_train = members.size() - n_val - n_test;
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (i < n_train) split.train.push_back(members[i]);
            else if (i < n_train + n_val) split.val.push_back(members[i]);
            else split.test.push_back(members[i]);
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

}  // namespace gtea::graph
