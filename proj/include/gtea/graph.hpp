#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gtea/common.hpp"

namespace gtea::graph {

using NodeId = std::int32_t;
using EdgeId = std::int32_t;
using gtea::Rng;

constexpr int kUnlabeled = -1;

/// One timestamped interaction. `u`/`v` keep the raw direction of the event;
/// `dir` is +1 when the raw source is the smaller id of the canonical pair,
/// -1 otherwise. Feature width is uniform across a graph.
struct EventRecord {
    NodeId u = 0;
    NodeId v = 0;
    double t = 0.0;
    std::vector<double> features;
    int dir = +1;
};

/// All interactions of one undirected node pair, time-sorted ascending
/// (ties keep input order). Always holds at least one event.
struct EdgeSequence {
    std::pair<NodeId, NodeId> pair;  // (min id, max id)
    std::vector<EventRecord> events;

    std::size_t length() const { return events.size(); }
};

/// Temporal interaction graph: dense node ids in [0, N), per-node feature
/// vectors, partial integer labels, and a symmetric adjacency whose entries
/// reference the shared edge-sequence store. Immutable after construction
/// and safe to share across threads.
struct TemporalGraph {
    std::size_t num_nodes = 0;
    std::size_t node_feat_dim = 0;
    std::size_t edge_feat_dim = 0;
    int num_classes = 0;

    std::vector<std::vector<double>> node_features;       // [node][dim]
    std::vector<int> labels;                              // kUnlabeled if none
    std::vector<EdgeSequence> edges;
    std::vector<std::vector<std::pair<NodeId, EdgeId>>> adjacency;  // sorted by neighbor
    double t_min = 0.0;
    double t_max = 0.0;

    std::size_t degree(NodeId u) const { return adjacency[static_cast<std::size_t>(u)].size(); }

    std::vector<NodeId> labeled_nodes() const {
        std::vector<NodeId> out;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != kUnlabeled) out.push_back(static_cast<NodeId>(i));
        }
        return out;
    }

    /// Edge id of the canonical pair (u, v), or -1 if absent.
    EdgeId find_edge(NodeId u, NodeId v) const;

    /// Timestamp normalized to the graph span; 0 when the span is degenerate.
    double normalize_time(double t) const {
        const double span = t_max - t_min;
        return span > 0.0 ? (t - t_min) / span : 0.0;
    }
};

/// Sampled L-layer computation structure for a set of seed nodes. Row/column
/// indices are precomputed so a forward pass only gathers.
struct MiniBatch {
    struct Target {
        NodeId node = 0;
        int self_row = 0;                // row of `node` in the previous level
        std::vector<int> nbr_rows;       // rows of sampled neighbors, prev level
        std::vector<int> edge_cols;      // positions in `edge_ids`
        std::vector<NodeId> nbr_ids;     // sampled neighbors, sorted ascending
    };
    struct Layer {
        std::vector<Target> targets;     // sorted by node id
    };

    std::vector<NodeId> seeds;           // sorted, deduplicated
    std::vector<NodeId> input_nodes;     // level-0 frontier (all nodes needed)
    std::vector<Layer> layers;           // layers[k-1] computes embeddings at depth k
    std::vector<EdgeId> edge_ids;        // unique edges used, sorted
};

/// Raw directed interaction before canonicalization.
struct RawEvent {
    NodeId src = 0;
    NodeId dst = 0;
    double t = 0.0;
    std::vector<double> features;
};

/// Merge raw directed events into canonical undirected sequences keyed by
/// (min id, max id), each sorted ascending by time with stable ties, and a
/// direction flag per event. Throws DataError for negative timestamps or
/// self-interactions.
std::vector<EdgeSequence> build_edge_sequences(const std::vector<RawEvent>& events);

/// Load a graph from the nodes/events CSV files (schemas in the README).
/// Malformed rows raise DataError with the offending line number.
TemporalGraph load_graph(const std::string& nodes_path, const std::string& events_path);

/// Write a graph back to the CSV schemas; a reload reproduces it exactly.
void save_graph(const TemporalGraph& graph, const std::string& nodes_path,
                const std::string& events_path);

/// Uniform sample without replacement of at most `fanout` neighbors of u,
/// returned sorted by neighbor id. Degree <= fanout returns all neighbors.
std::vector<std::pair<NodeId, EdgeId>> sample_neighbors(const TemporalGraph& graph, NodeId u,
                                                        std::size_t fanout, Rng& rng);

/// Build the sampled L-layer block structure for `seeds`. fanouts[k-1] is the
/// cap at depth k. Frontier closure holds: every node whose depth-k embedding
/// is needed appears as a depth-k target with its sampled neighborhood.
MiniBatch make_minibatch(const TemporalGraph& graph, const std::vector<NodeId>& seeds,
                         std::size_t num_layers, const std::vector<std::size_t>& fanouts,
                         Rng& rng);

struct DatasetSplit {
    std::vector<NodeId> train;
    std::vector<NodeId> val;
    std::vector<NodeId> test;
};

/// Stratified split of the labeled nodes: every class is split independently
/// by the ratios (floor for val/test, remainder to train). Classes with
/// fewer than 3 members raise DataError.
DatasetSplit split_dataset(const TemporalGraph& graph, double train_ratio, double val_ratio,
                           double test_ratio, Rng& rng);

}  // namespace gtea::graph
