// SPDX-License-Identifier: Apache-2.0

#include "graphormer/graph2d.hpp"

#include <algorithm>
#include <deque>
#include <map>

namespace graphormer {

void Graph2D::validate() const {
    if (!node_feats.empty() && node_feats.size() != n) {
        throw ContractError("graph2d: node_feats rows do not match node count");
    }
    for (const auto& e : edges) {
        if (e.u >= n || e.v >= n) {
            throw IndexError("graph2d: edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                             ") out of range for " + std::to_string(n) + " nodes");
        }
        if (e.u == e.v) {
            throw ContractError("graph2d: self-loop at node " + std::to_string(e.u));
        }
    }
}

namespace {

std::vector<std::vector<std::size_t>> adjacency(const Graph2D& g) {
    std::vector<std::vector<std::size_t>> adj(g.n);
    for (const auto& e : g.edges) {
        adj[e.u].push_back(e.v);
        if (g.undirected) adj[e.v].push_back(e.u);
    }
    for (auto& nbrs : adj) {
        std::sort(nbrs.begin(), nbrs.end());
        nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
    }
    return adj;
}

} // namespace

SpdResult bfs_spd(const Graph2D& g, int max_dist) {
    if (max_dist < 1) throw ContractError("bfs_spd: max_dist must be >= 1");
    g.validate();
    const std::size_t n = g.n;
    const auto adj = adjacency(g);

    SpdResult r;
    r.n = n;
    r.max_dist = max_dist;
    r.dist.assign(n * n, SpdResult::kUnreachable);
    r.pred.assign(n * n, SpdResult::kUnreachable);

    std::vector<int> raw(n);
    for (std::size_t s = 0; s < n; ++s) {
        std::fill(raw.begin(), raw.end(), SpdResult::kUnreachable);
        raw[s] = 0;
        std::deque<std::size_t> queue{s};
        while (!queue.empty()) {
            const std::size_t u = queue.front();
            queue.pop_front();
            for (std::size_t v : adj[u]) {
                if (raw[v] == SpdResult::kUnreachable) {
                    raw[v] = raw[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (std::size_t v = 0; v < n; ++v) {
            if (raw[v] == SpdResult::kUnreachable) continue;
            r.dist[s * n + v] = std::min(raw[v], max_dist);
            if (v == s) continue;
            // canonical tie-break: smallest-index neighbor one level closer
            for (std::size_t u : adj[v]) {
                if (raw[u] == raw[v] - 1) {
                    r.pred[s * n + v] = static_cast<int>(u);
                    break;
                }
            }
        }
    }
    return r;
}

std::vector<std::size_t> SpdResult::path(std::size_t i, std::size_t j) const {
    if (i == j || dist[i * n + j] == kUnreachable) return {};
    std::vector<std::size_t> nodes{j};
    std::size_t cur = j;
    while (cur != i) {
        const int p = pred[i * n + cur];
        if (p == kUnreachable) return {}; // defensive; cannot happen for reachable pairs
        cur = static_cast<std::size_t>(p);
        nodes.push_back(cur);
    }
    std::reverse(nodes.begin(), nodes.end());
    return nodes;
}

std::vector<std::int64_t> degree_ids(const Graph2D& g, int max_degree) {
    if (max_degree < 1) throw ContractError("degree_ids: max_degree must be >= 1");
    g.validate();
    std::vector<std::int64_t> deg(g.n, 0);
    for (const auto& e : g.edges) {
        deg[e.u] += 1;
        deg[e.v] += 1;
    }
    for (auto& d : deg) d = std::min<std::int64_t>(d, max_degree);
    return deg;
}

Tensor centrality_embed(const std::vector<std::int64_t>& degrees, const Tensor& table) {
    return embedding_lookup(table, degrees);
}

Tensor spatial_bias(const SpdResult& spd, const Tensor& table) {
    const std::size_t buckets = static_cast<std::size_t>(spd.max_dist) + 2;
    if (table.ndim() != 2 || table.shape()[0] != buckets) {
        throw ShapeError("spatial_bias: table must be [" + std::to_string(buckets) +
                         ",H], got " + shape_str(table.shape()));
    }
    const std::size_t n = spd.n;
    std::vector<std::int64_t> ids(n * n);
    for (std::size_t i = 0; i < n * n; ++i) {
        const int d = spd.dist[i];
        ids[i] = d == SpdResult::kUnreachable ? static_cast<std::int64_t>(buckets - 1)
                                              : static_cast<std::int64_t>(d);
    }
    const std::size_t heads = table.shape()[1];
    Tensor flat = embedding_lookup(table, ids);            // [n*n, H]
    Tensor cube = reshape(flat, {n, n, heads});            // [n, n, H]
    return transpose(cube, {2, 0, 1});                     // [H, n, n]
}

EdgePathIndex build_edge_paths(const Graph2D& g, const SpdResult& spd, std::size_t max_hops) {
    EdgePathIndex idx;
    idx.n = g.n;
    idx.feat_columns = g.edges.empty() ? 0 : g.edges[0].feats.size();
    idx.paths.assign(g.n * g.n, {});

    std::map<std::pair<std::size_t, std::size_t>, std::size_t> edge_of;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto& ed = g.edges[e];
        edge_of.emplace(std::make_pair(ed.u, ed.v), e);
        if (g.undirected) edge_of.emplace(std::make_pair(ed.v, ed.u), e);
    }

    for (std::size_t i = 0; i < g.n; ++i) {
        for (std::size_t j = 0; j < g.n; ++j) {
            if (i == j) continue;
            const auto nodes = spd.path(i, j);
            if (nodes.empty()) continue;
            auto& out = idx.paths[i * g.n + j];
            const std::size_t hops = std::min(nodes.size() - 1, max_hops);
            out.reserve(hops * idx.feat_columns);
            for (std::size_t p = 0; p < hops; ++p) {
                const auto it = edge_of.find({nodes[p], nodes[p + 1]});
                const auto& feats = g.edges[it->second].feats;
                out.insert(out.end(), feats.begin(), feats.end());
            }
        }
    }
    return idx;
}

Tensor edge_bias(const EdgePathIndex& paths, const Tensor& edge_embed,
                 const Tensor& pos_weights) {
    if (edge_embed.ndim() != 2) {
        throw ShapeError("edge_bias: edge_embed must be [V_e,d_e], got " +
                         shape_str(edge_embed.shape()));
    }
    if (pos_weights.ndim() != 3 || pos_weights.shape()[1] != edge_embed.shape()[1]) {
        throw ShapeError("edge_bias: pos_weights must be [max_hops,d_e,H], got " +
                         shape_str(pos_weights.shape()));
    }
    const std::size_t n = paths.n;
    const std::size_t cols = paths.feat_columns;
    const std::size_t vocab = edge_embed.shape()[0];
    const std::size_t edim = edge_embed.shape()[1];
    const std::size_t heads = pos_weights.shape()[2];

    const auto& ev = edge_embed.values();
    const auto& wv = pos_weights.values();
    std::vector<double> vals(heads * n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const auto& ids = paths.paths[i * n + j];
            if (ids.empty()) continue;
            const std::size_t hops = ids.size() / cols;
            for (std::size_t p = 0; p < hops; ++p) {
                for (std::size_t h = 0; h < heads; ++h) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                        const auto id = ids[p * cols + c];
                        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
                            throw IndexError("edge_bias: id " + std::to_string(id) +
                                             " out of range for table of size " +
                                             std::to_string(vocab));
                        }
                        const double* emb = ev.data() + static_cast<std::size_t>(id) * edim;
                        const double* w = wv.data() + (p * edim) * heads + h;
                        for (std::size_t e = 0; e < edim; ++e) dot += emb[e] * w[e * heads];
                    }
                    vals[(h * n + i) * n + j] += dot / static_cast<double>(hops);
                }
            }
        }
    }
    Tensor out = detail::make_op_output("edge_bias", {heads, n, n}, std::move(vals),
                                        edge_embed.requires_grad() || pos_weights.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record("edge_bias", out,
                               [paths, edge_embed, pos_weights, out, n, cols, edim, heads]() {
            const auto& g = out.grad();
            const auto& ev2 = edge_embed.values();
            const auto& wv2 = pos_weights.values();
            Tensor em = edge_embed;
            Tensor wm = pos_weights;
            double* ge = edge_embed.requires_grad() ? em.grad_buffer().data() : nullptr;
            double* gw = pos_weights.requires_grad() ? wm.grad_buffer().data() : nullptr;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const auto& ids = paths.paths[i * n + j];
                    if (ids.empty()) continue;
                    const std::size_t hops = ids.size() / cols;
                    const double inv_hops = 1.0 / static_cast<double>(hops);
                    for (std::size_t p = 0; p < hops; ++p) {
                        for (std::size_t h = 0; h < heads; ++h) {
                            const double go = g[(h * n + i) * n + j] * inv_hops;
                            if (go == 0.0) continue;
                            for (std::size_t c = 0; c < cols; ++c) {
                                const auto row = static_cast<std::size_t>(ids[p * cols + c]);
                                const double* emb = ev2.data() + row * edim;
                                const double* w = wv2.data() + (p * edim) * heads + h;
                                for (std::size_t e = 0; e < edim; ++e) {
                                    if (ge) ge[row * edim + e] += go * w[e * heads];
                                    if (gw) gw[(p * edim + e) * heads + h] += go * emb[e];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor add_graph_token_embeddings(const Tensor& node_embeddings, const Tensor& token_embed) {
    return concat({token_embed, node_embeddings}, 0);
}

Tensor add_graph_token_bias(const Tensor& bias, const Tensor& token_bias) {
    if (bias.ndim() != 3 || bias.shape()[1] != bias.shape()[2]) {
        throw ShapeError("add_graph_token_bias: bias must be [H,n,n], got " +
                         shape_str(bias.shape()));
    }
    const std::size_t heads = bias.shape()[0];
    if (token_bias.shape() != Shape{heads}) {
        throw ShapeError("add_graph_token_bias: token bias must be [" + std::to_string(heads) +
                         "], got " + shape_str(token_bias.shape()));
    }
    const std::size_t n = bias.shape()[1];
    const std::size_t m = n + 1;
    const auto& bv = bias.values();
    const auto& tv = token_bias.values();
    std::vector<double> vals(heads * m * m);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                vals[(h * m + i) * m + j] = (i == 0 || j == 0)
                                                ? tv[h]
                                                : bv[(h * n + i - 1) * n + j - 1];
            }
        }
    }
    Tensor out = detail::make_op_output("add_graph_token_bias", {heads, m, m}, std::move(vals),
                                        bias.requires_grad() || token_bias.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record("add_graph_token_bias", out, [bias, token_bias, out, heads, n, m]() {
            const auto& g = out.grad();
            Tensor bm = bias;
            Tensor tm = token_bias;
            double* gb = bias.requires_grad() ? bm.grad_buffer().data() : nullptr;
            double* gt = token_bias.requires_grad() ? tm.grad_buffer().data() : nullptr;
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < m; ++j) {
                        const double go = g[(h * m + i) * m + j];
                        if (i == 0 || j == 0) {
                            if (gt) gt[h] += go;
                        } else if (gb) {
                            gb[(h * n + i - 1) * n + j - 1] += go;
                        }
                    }
                }
            }
        });
    }
    return out;
}

} // namespace graphormer
