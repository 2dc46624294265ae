#pragma once

#include "gtea/graph.hpp"

namespace gtea::graph {

/// Configuration for the synthetic benchmark generator. Labels depend only
/// on edge dynamics: positive-class nodes are linked by "pattern" edges
/// carrying periodic high-amplitude events, every other edge carries
/// Poisson-timed noise events, and node features are pure noise.
struct GenSpec {
    std::size_t num_nodes = 64;
    int num_classes = 2;
    double avg_degree = 4.0;
    std::size_t pattern_neighbors = 1;  // pattern edges incident to each positive node
    double period = 50.0;               // base period of pattern events (class 1)
    double amplitude = 3.0;             // pattern feature amplitude
    double noise = 0.3;                 // noise scale for features and time jitter
    double time_span = 1000.0;
    double mean_events = 6.0;           // mean event count on noise edges (min 1)
    std::size_t node_feat_dim = 4;
    std::size_t edge_feat_dim = 2;
};

/// Deterministic for a fixed spec and rng state. Throws ConfigError when the
/// spec is infeasible (degree bounds, class sizes incompatible with the
/// pattern wiring).
TemporalGraph generate_synthetic(const GenSpec& spec, Rng& rng);

}  // namespace gtea::graph
