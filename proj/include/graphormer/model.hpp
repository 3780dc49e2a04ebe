// SPDX-License-Identifier: Apache-2.0
//
// The encoder stack: token embeddings plus centrality additions, multi-head
// self-attention with additive structural bias, GELU feed-forward blocks,
// and a Pre-LN / Post-LN placement switch. Expanded periodic images enter
// attention as keys/values only; queries (and every readout) are original
// atoms.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "graphormer/geometry3d.hpp"
#include "graphormer/graph2d.hpp"
#include "graphormer/heads.hpp"
#include "graphormer/rng.hpp"
#include "graphormer/tensor.hpp"

namespace graphormer {

enum class LnPlacement { kPre, kPost };
enum class GraphMode { kGraph2D, kGraph3D };

struct VocabConfig {
    std::size_t node_vocab = 32; // shared across node feature columns (2D)
    std::size_t node_columns = 2;
    std::size_t edge_vocab = 16;
    std::size_t edge_columns = 2;
    std::size_t edge_dim = 16;
    int max_degree = 64;
    int max_dist = 20;
    std::size_t atom_vocab = 120; // atomic numbers (3D)
};

struct ModelConfig {
    GraphMode mode = GraphMode::kGraph3D;
    std::size_t layers = 4;
    std::size_t hidden_dim = 64;
    std::size_t heads = 4;
    std::size_t ffn_dim = 0; // 0 -> hidden_dim
    LnPlacement ln_placement = LnPlacement::kPost;
    double ln_eps = 1e-5;
    std::size_t recycle_count = 1;
    bool recycle_hidden = false;
    double dropout = 0.0; // hook only; the reference path runs dropout-free
    GbfBank gbf;
    std::size_t gbf_hidden = 0; // 0 -> gbf.num_basis
    bool use_graph_token = true;
    bool share_direction_projections = true;
    VocabConfig vocab;

    std::size_t ffn_width() const { return ffn_dim ? ffn_dim : hidden_dim; }
    std::size_t gbf_hidden_width() const { return gbf_hidden ? gbf_hidden : gbf.num_basis; }
    std::size_t head_dim() const { return hidden_dim / heads; }
    void validate() const;
};

struct BlockParams {
    Tensor wq, wk, wv, wo;          // [d, d]
    Tensor ffn_w1;                  // [d, ffn]
    Tensor ffn_w2;                  // [ffn, d]
    Tensor ln1_gamma, ln1_beta;
    Tensor ln2_gamma, ln2_beta;
};

struct MhaOutput {
    Tensor y;    // [n_q, d]
    Tensor attn; // [H, n_q, n_kv]
};

// attn = softmax(QK^T / sqrt(d/H) + bias); y = (attn V) W_o.
MhaOutput mha(const Tensor& x_q, const Tensor& x_kv, const Tensor& bias,
              const BlockParams& params, std::size_t heads);

// One residual block. kv_extra rows join attention as keys/values without a
// residual stream of their own.
Tensor block_forward(const Tensor& x, const std::optional<Tensor>& kv_extra, const Tensor& bias,
                     const BlockParams& params, std::size_t heads, LnPlacement placement,
                     double eps);

class GraphormerModel {
public:
    GraphormerModel(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    // Stable creation-order parameter list, shared storage with the model.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    void zero_grad() const;

    // 2D: encoder output per token (readout token first when enabled).
    Tensor encode_graph(const Graph2D& g) const;
    // 2D: graph-level scalar prediction (graph token or mean readout).
    Tensor predict_graph_target(const Graph2D& g) const;

    struct Output3D {
        Tensor energy;       // scalar
        Tensor displacement; // [n, 3], predicted relative to the initial positions
        Tensor node_reprs;   // [n, d]
    };

    // Single encoder pass; no recycling machinery touched.
    Output3D forward_3d(const Structure3D& s) const;

    // Feeds predicted positions back `cycles` times; gradients flow only
    // through the last cycle.
    Output3D recycle_forward(const Structure3D& s, std::size_t cycles) const;

    // Equivariance ablation switch (unshared projections break it).
    EquivariantHeadParams& equivariant_head() { return eq_head_; }
    const EquivariantHeadParams& equivariant_head() const { return eq_head_; }
    const MlpHeadParams& scalar_head() const { return scalar_head_; }

private:
    Output3D forward_3d_at(const Structure3D& s, const std::vector<Vec3>& positions,
                           const Tensor* injected_hidden) const;
    Tensor encode(const Tensor& x, const std::optional<Tensor>& kv_extra,
                  const Tensor& bias) const;

    ModelConfig config_;

    // 2D parameters
    Tensor node_embed_;        // [node_vocab, d]
    Tensor degree_embed_;      // [max_degree+1, d]
    Tensor spatial_table_;     // [max_dist+2, H]
    Tensor edge_embed_;        // [edge_vocab, edge_dim]
    Tensor edge_pos_weights_;  // [max_dist, edge_dim, H]
    Tensor token_embed_;       // [1, d]
    Tensor token_bias_;        // [H]

    // 3D parameters
    Tensor atom_embed_;        // [atom_vocab, d]
    Tensor tag_embed_;         // [2, d] free/fixed
    Tensor centrality_proj_;   // [K, d]
    Tensor gbf_w1_, gbf_b1_;   // [K, hidden], [hidden]
    Tensor gbf_w2_;            // [hidden, H]

    std::vector<BlockParams> blocks_;
    Tensor final_ln_gamma_, final_ln_beta_; // PRE placement only

    MlpHeadParams scalar_head_; // 2D target / 3D energy
    EquivariantHeadParams eq_head_;
};

} // namespace graphormer
