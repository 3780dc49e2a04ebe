// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the model-level test suites.

#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "graphormer/geometry3d.hpp"
#include "graphormer/graph2d.hpp"
#include "graphormer/model.hpp"
#include "graphormer/rng.hpp"

namespace graphormer::testing {

inline std::vector<double> random_values(Rng& rng, std::size_t count, double scale = 1.0) {
    std::vector<double> v(count);
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return v;
}

inline std::array<Vec3, 3> random_rotation(Rng& rng) {
    double q[4];
    double norm = 0.0;
    for (auto& c : q) {
        c = rng.normal();
        norm += c * c;
    }
    norm = std::sqrt(norm);
    for (auto& c : q) c /= norm;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    return {Vec3{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
            Vec3{2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
            Vec3{2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
}

inline Vec3 rotate(const std::array<Vec3, 3>& r, const Vec3& p) {
    return {r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2]};
}

inline std::vector<Vec3> rigid_motion(const std::vector<Vec3>& pos,
                                      const std::array<Vec3, 3>& r, const Vec3& t) {
    std::vector<Vec3> out;
    out.reserve(pos.size());
    for (const auto& p : pos) {
        const Vec3 q = rotate(r, p);
        out.push_back({q[0] + t[0], q[1] + t[1], q[2] + t[2]});
    }
    return out;
}

// Free molecule whose pair distances sit safely inside the default cutoff.
inline Structure3D random_molecule(Rng& rng, std::size_t n, double box = 2.4) {
    Structure3D s;
    for (std::size_t i = 0; i < n; ++i) {
        s.atoms.push_back(1 + rng.uniform_int(0, 7));
        s.positions.push_back(
            {rng.uniform(0.0, box), rng.uniform(0.0, box), rng.uniform(0.0, box)});
    }
    // keep geometry non-degenerate
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double diff = s.positions[i][c] - s.positions[j][c];
                d += diff * diff;
            }
            if (std::sqrt(d) < 0.3) return random_molecule(rng, n, box);
        }
    }
    return s;
}

// Random tree: unique shortest paths keep the edge encoding label-invariant.
inline Graph2D random_tree(Rng& rng, std::size_t n, std::int64_t vocab = 4,
                           std::size_t feat_cols = 2) {
    Graph2D g;
    g.n = n;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::int64_t> feats;
        for (std::size_t c = 0; c < feat_cols; ++c) feats.push_back(rng.uniform_int(0, vocab - 1));
        g.node_feats.push_back(std::move(feats));
    }
    for (std::size_t i = 1; i < n; ++i) {
        const auto parent = static_cast<std::size_t>(rng.uniform_int(0, i - 1));
        std::vector<std::int64_t> feats;
        for (std::size_t c = 0; c < feat_cols; ++c) feats.push_back(rng.uniform_int(0, vocab - 1));
        g.edges.push_back({parent, i, std::move(feats)});
    }
    return g;
}

inline ModelConfig small_config_3d(std::size_t layers = 2, std::size_t hidden = 8,
                                   std::size_t heads = 2) {
    ModelConfig cfg;
    cfg.mode = GraphMode::kGraph3D;
    cfg.layers = layers;
    cfg.hidden_dim = hidden;
    cfg.heads = heads;
    cfg.gbf.num_basis = 8;
    cfg.gbf.cutoff = 5.0;
    cfg.gbf_hidden = 8;
    cfg.vocab.atom_vocab = 12;
    return cfg;
}

inline ModelConfig small_config_2d(std::size_t layers = 2, std::size_t hidden = 8,
                                   std::size_t heads = 2) {
    ModelConfig cfg;
    cfg.mode = GraphMode::kGraph2D;
    cfg.layers = layers;
    cfg.hidden_dim = hidden;
    cfg.heads = heads;
    cfg.vocab.node_vocab = 4;
    cfg.vocab.node_columns = 2;
    cfg.vocab.edge_vocab = 4;
    cfg.vocab.edge_columns = 2;
    cfg.vocab.edge_dim = 4;
    cfg.vocab.max_degree = 8;
    cfg.vocab.max_dist = 6;
    return cfg;
}

} // namespace graphormer::testing
