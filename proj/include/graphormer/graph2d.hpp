// SPDX-License-Identifier: Apache-2.0
//
// Structural encodings for 2D molecular graphs: degree centrality,
// shortest-path spatial buckets, and edge-feature path encodings, all
// produced as additive inputs for the attention stack.

#pragma once

#include <cstdint>
#include <vector>

#include "graphormer/tensor.hpp"

namespace graphormer {

struct Graph2D {
    std::size_t n = 0;
    // n rows, fixed number of categorical feature columns per node.
    std::vector<std::vector<std::int64_t>> node_feats;
    struct Edge {
        std::size_t u = 0;
        std::size_t v = 0;
        std::vector<std::int64_t> feats;
    };
    std::vector<Edge> edges;
    bool undirected = true;

    void validate() const; // index bounds, no self-loops
};

// Hop distances plus one canonical shortest path per reachable pair.
// pred[s][v] is the predecessor of v on the canonical path from s, chosen as
// the smallest-index neighbor one BFS level closer to s.
struct SpdResult {
    static constexpr int kUnreachable = -1;

    std::size_t n = 0;
    int max_dist = 0;
    std::vector<int> dist; // n*n, hops clamped to max_dist, kUnreachable sentinel
    std::vector<int> pred; // n*n, kUnreachable where no path or s==v

    int distance(std::size_t i, std::size_t j) const { return dist[i * n + j]; }
    // Node sequence from i to j inclusive; empty when unreachable or i==j.
    std::vector<std::size_t> path(std::size_t i, std::size_t j) const;
};

SpdResult bfs_spd(const Graph2D& g, int max_dist);

// Degrees clamped to max_degree.
std::vector<std::int64_t> degree_ids(const Graph2D& g, int max_degree);

// Row i = table[degree_i]; table is [max_degree+1, d].
Tensor centrality_embed(const std::vector<std::int64_t>& degrees, const Tensor& table);

// bias[h,i,j] = table[bucket(dist(i,j)), h]; table is [max_dist+2, H] with the
// last row reserved for unreachable pairs.
Tensor spatial_bias(const SpdResult& spd, const Tensor& table);

// Per-pair edge-feature ids along the canonical shortest path, precomputed so
// the bias op does not re-walk paths. paths[i*n+j] lists, per hop, the feature
// ids of the traversed edge (multi-column features flattened per hop).
struct EdgePathIndex {
    std::size_t n = 0;
    std::size_t feat_columns = 0;
    std::vector<std::vector<std::int64_t>> paths; // n*n entries, hop-major ids
};

EdgePathIndex build_edge_paths(const Graph2D& g, const SpdResult& spd, std::size_t max_hops);

// bias[h,i,j] = mean over hops p of dot(sum of edge-feature embeddings at hop p,
// pos_weights[p,:,h]); zero on the diagonal and for unreachable pairs.
// edge_embed is [V_e, d_e], pos_weights is [max_hops, d_e, H].
Tensor edge_bias(const EdgePathIndex& paths, const Tensor& edge_embed,
                 const Tensor& pos_weights);

// Readout-token augmentation: prepends a learned row to the node embeddings
// and grows the bias so every token<->node pair (and the token itself) reads
// a dedicated learnable bucket.
// token_embed is [1, d]; token_bias is [H] (one bucket row).
Tensor add_graph_token_embeddings(const Tensor& node_embeddings, const Tensor& token_embed);
Tensor add_graph_token_bias(const Tensor& bias, const Tensor& token_bias);

} // namespace graphormer
