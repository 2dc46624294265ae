#include "gtea/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace gtea::graph {

namespace {

template <typename V>
void shuffle_all(V& v, Rng& rng) {
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
        std::swap(v[i], v[pick(rng)]);
    }
}

}  // namespace

TemporalGraph generate_synthetic(const GenSpec& spec, Rng& rng) {
    const std::size_t n = spec.num_nodes;
    if (n < 8) throw ConfigError("generate_synthetic: need at least 8 nodes");
    if (spec.num_classes < 2) throw ConfigError("generate_synthetic: need at least 2 classes");
    const std::size_t degree = static_cast<std::size_t>(std::llround(spec.avg_degree));
    if (degree < spec.pattern_neighbors + 1 || degree > n - 1) {
        throw ConfigError("generate_synthetic: avg_degree must be in [pattern_neighbors+1, N-1]");
    }
    if (spec.pattern_neighbors < 1) {
        throw ConfigError("generate_synthetic: pattern_neighbors must be >= 1");
    }
    if (spec.period <= 0 || spec.time_span <= 0 || spec.period > spec.time_span) {
        throw ConfigError("generate_synthetic: need 0 < period <= time_span");
    }
    if (spec.edge_feat_dim < 1) {
        throw ConfigError("generate_synthetic: edge_feat_dim must be >= 1");
    }

    TemporalGraph g;
    g.num_nodes = n;
    g.node_feat_dim = spec.node_feat_dim;
    g.edge_feat_dim = spec.edge_feat_dim;
    g.num_classes = spec.num_classes;

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif01(0.0, 1.0);

    // Node features are drawn before any label exists, so they carry no
    // label information by construction.
    g.node_features.assign(n, {});
    for (std::size_t u = 0; u < n; ++u) {
        g.node_features[u].resize(spec.node_feat_dim);
        for (std::size_t d = 0; d < spec.node_feat_dim; ++d) {
            g.node_features[u][d] = gauss(rng);
        }
    }

    // Balanced class assignment over a shuffled node order.
    std::vector<NodeId> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<NodeId>(i);
    shuffle_all(order, rng);
    g.labels.assign(n, kUnlabeled);
    const std::size_t per_class = n / static_cast<std::size_t>(spec.num_classes);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = std::min(i / per_class,
                                         static_cast<std::size_t>(spec.num_classes) - 1);
        g.labels[order[i]] = static_cast<int>(cls);
    }

    // Pattern wiring inside each positive class: a perfect matching when one
    // pattern neighbor is requested, a circulant ring with offsets 1..k/2
    // for an even count k. Every member ends up with exactly k pattern edges.
    std::vector<std::pair<std::pair<NodeId, NodeId>, int>> pattern_edges;
    std::vector<std::size_t> pattern_degree(n, 0);
    for (int cls = 1; cls < spec.num_classes; ++cls) {
        std::vector<NodeId> members;
        for (std::size_t u = 0; u < n; ++u) {
            if (g.labels[u] == cls) members.push_back(static_cast<NodeId>(u));
        }
        shuffle_all(members, rng);
        const std::size_t k = spec.pattern_neighbors;
        auto add_pattern = [&](NodeId a, NodeId b) {
            pattern_edges.push_back({{std::min(a, b), std::max(a, b)}, cls});
            ++pattern_degree[a];
            ++pattern_degree[b];
        };
        if (k == 1) {
            if (members.size() % 2 != 0) {
                throw ConfigError("generate_synthetic: class " + std::to_string(cls) +
                                  " has an odd member count (" +
                                  std::to_string(members.size()) +
                                  "); one pattern neighbor per node needs an even class size");
            }
            for (std::size_t i = 0; i + 1 < members.size(); i += 2) {
                add_pattern(members[i], members[i + 1]);
            }
        } else {
            if (k % 2 != 0) {
                throw ConfigError("generate_synthetic: pattern_neighbors must be 1 or even");
            }
            if (members.size() <= k) {
                throw ConfigError("generate_synthetic: class " + std::to_string(cls) +
                                  " needs more than " + std::to_string(k) + " members");
            }
            for (std::size_t off = 1; off <= k / 2; ++off) {
                for (std::size_t i = 0; i < members.size(); ++i) {
                    add_pattern(members[i], members[(i + off) % members.size()]);
                }
            }
        }
    }
    std::set<std::pair<NodeId, NodeId>> used;
    for (const auto& [pr, cls] : pattern_edges) used.insert(pr);

    // Noise edges via stub matching so that every node reaches the same
    // total degree; the topology then carries no label information, which
    // keeps the edge-ablation baseline honest.
    std::vector<NodeId> stubs;
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t s = pattern_degree[u]; s < degree; ++s) {
            stubs.push_back(static_cast<NodeId>(u));
        }
    }
    if (stubs.size() % 2 != 0) stubs.pop_back();
    std::vector<std::pair<NodeId, NodeId>> noise_pairs;
    std::vector<NodeId> pool = std::move(stubs);
    for (int round = 0; round < 300 && pool.size() >= 2; ++round) {
        shuffle_all(pool, rng);
        std::vector<NodeId> leftover;
        for (std::size_t i = 0; i + 1 < pool.size(); i += 2) {
            const NodeId a = pool[i], b = pool[i + 1];
            const std::pair<NodeId, NodeId> pr{std::min(a, b), std::max(a, b)};
            if (a == b || !used.insert(pr).second) {
                leftover.push_back(a);
                leftover.push_back(b);
            } else {
                noise_pairs.push_back(pr);
            }
        }
        if (pool.size() % 2 == 1) leftover.push_back(pool.back());
        pool = std::move(leftover);
    }
    // a handful of unmatched stubs after many rounds is acceptable slack

    // Event sequences. Pattern edges tick at the class period with jittered
    // times and a high-amplitude first feature; noise edges carry Poisson
    // counts of small random events at uniform times.
    std::vector<RawEvent> raw;
    auto emit_noise_edge = [&](std::pair<NodeId, NodeId> pr) {
        std::poisson_distribution<int> count_dist(spec.mean_events);
        const int count = std::max(1, count_dist(rng));
        for (int i = 0; i < count; ++i) {
            RawEvent ev;
            const bool flip = unif01(rng) < 0.5;
            ev.src = flip ? pr.second : pr.first;
            ev.dst = flip ? pr.first : pr.second;
            ev.t = unif01(rng) * spec.time_span;
            ev.features.resize(spec.edge_feat_dim);
            for (std::size_t d = 0; d < spec.edge_feat_dim; ++d) {
                ev.features[d] = spec.noise * gauss(rng);
            }
            raw.push_back(std::move(ev));
        }
    };
    auto emit_pattern_edge = [&](std::pair<NodeId, NodeId> pr, int cls) {
        const double period = spec.period / static_cast<double>(cls);
        const double phase = unif01(rng) * period;
        for (double t0 = phase; t0 <= spec.time_span; t0 += period) {
            RawEvent ev;
            ev.src = pr.first;
            ev.dst = pr.second;
            const double jitter = spec.noise * 0.05 * period * gauss(rng);
            ev.t = std::clamp(t0 + jitter, 0.0, spec.time_span);
            ev.features.resize(spec.edge_feat_dim);
            ev.features[0] = spec.amplitude + spec.noise * gauss(rng);
            for (std::size_t d = 1; d < spec.edge_feat_dim; ++d) {
                ev.features[d] = spec.noise * gauss(rng);
            }
            raw.push_back(std::move(ev));
        }
    };
    for (const auto& [pr, cls] : pattern_edges) emit_pattern_edge(pr, cls);
    for (const auto& pr : noise_pairs) emit_noise_edge(pr);

    g.edges = build_edge_sequences(raw);
    g.adjacency.assign(n, {});
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto [a, b] = g.edges[e].pair;
        g.adjacency[a].emplace_back(b, static_cast<EdgeId>(e));
        g.adjacency[b].emplace_back(a, static_cast<EdgeId>(e));
    }
    for (auto& nbrs : g.adjacency) std::sort(nbrs.begin(), nbrs.end());

    g.t_min = raw.empty() ? 0.0 : raw[0].t;
    g.t_max = g.t_min;
    for (const RawEvent& ev : raw) {
        g.t_min = std::min(g.t_min, ev.t);
        g.t_max = std::max(g.t_max, ev.t);
    }
    return g;
}

}  // namespace gtea::graph
