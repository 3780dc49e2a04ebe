// SPDX-License-Identifier: Apache-2.0

#include "graphormer/model.hpp"

#include <cmath>

namespace graphormer {

namespace {

Tensor trunc_normal(Rng& rng, Shape shape, double stddev = 0.02) {
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = rng.truncated_normal(stddev);
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor const_param(Shape shape, double value) {
    return Tensor::full(std::move(shape), value, true);
}

std::vector<std::int64_t> iota_ids(std::size_t begin, std::size_t end) {
    std::vector<std::int64_t> ids(end - begin);
    for (std::size_t i = begin; i < end; ++i) ids[i - begin] = static_cast<std::int64_t>(i);
    return ids;
}

// First-axis slice of a constant tensor (values only, never recorded).
Tensor slice_rows_const(const Tensor& t, std::size_t begin, std::size_t end) {
    Shape out_shape = t.shape();
    out_shape[0] = end - begin;
    const std::size_t row = t.numel() / t.shape()[0];
    std::vector<double> vals(t.values().begin() + begin * row, t.values().begin() + end * row);
    return Tensor::from(std::move(out_shape), std::move(vals));
}

} // namespace

void ModelConfig::validate() const {
    if (layers < 1) throw ContractError("model config: layer count must be >= 1");
    if (heads < 1 || hidden_dim % heads != 0) {
        throw ContractError("model config: hidden_dim must be divisible by heads");
    }
    if (ln_eps <= 0.0) throw ContractError("model config: ln_eps must be positive");
    if (recycle_count < 1) throw ContractError("model config: recycle_count must be >= 1");
    if (dropout != 0.0) {
        throw ContractError("model config: the reference path is dropout-free; set dropout to 0");
    }
    if (mode == GraphMode::kGraph3D) {
        if (gbf.num_basis < 2) throw ContractError("model config: gbf.num_basis must be >= 2");
        if (gbf.cutoff <= 0.0) throw ContractError("model config: gbf.cutoff must be positive");
    }
}

MhaOutput mha(const Tensor& x_q, const Tensor& x_kv, const Tensor& bias,
              const BlockParams& params, std::size_t heads) {
    const std::size_t nq = x_q.shape()[0];
    const std::size_t nk = x_kv.shape()[0];
    const std::size_t d = x_q.shape()[1];
    const std::size_t dh = d / heads;
    if (bias.shape() != Shape{heads, nq, nk}) {
        throw ShapeError("mha: bias must be [" + std::to_string(heads) + "," +
                         std::to_string(nq) + "," + std::to_string(nk) + "], got " +
                         shape_str(bias.shape()));
    }
    auto split_heads = [&](const Tensor& t, std::size_t n) {
        return transpose(reshape(t, {n, heads, dh}), {1, 0, 2}); // [H, n, dh]
    };
    Tensor q = split_heads(matmul(x_q, params.wq), nq);
    Tensor k = split_heads(matmul(x_kv, params.wk), nk);
    Tensor v = split_heads(matmul(x_kv, params.wv), nk);

    const double scaling = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor scores = add(scale(matmul(q, transpose(k, {0, 2, 1})), scaling), bias);
    Tensor attn = softmax_lastdim(scores);                       // [H, nq, nk]
    Tensor merged = reshape(transpose(matmul(attn, v), {1, 0, 2}), {nq, d});
    return {matmul(merged, params.wo), attn};
}

Tensor block_forward(const Tensor& x, const std::optional<Tensor>& kv_extra, const Tensor& bias,
                     const BlockParams& params, std::size_t heads, LnPlacement placement,
                     double eps) {
    if (placement == LnPlacement::kPre) {
        Tensor q_in = layer_norm(x, params.ln1_gamma, params.ln1_beta, eps);
        Tensor kv_in =
            kv_extra ? concat({q_in, layer_norm(*kv_extra, params.ln1_gamma, params.ln1_beta, eps)}, 0)
                     : q_in;
        Tensor h = add(x, mha(q_in, kv_in, bias, params, heads).y);
        Tensor f_in = layer_norm(h, params.ln2_gamma, params.ln2_beta, eps);
        Tensor ff = matmul(gelu(matmul(f_in, params.ffn_w1)), params.ffn_w2);
        return add(h, ff);
    }
    Tensor kv_in = kv_extra ? concat({x, *kv_extra}, 0) : x;
    Tensor h = layer_norm(add(x, mha(x, kv_in, bias, params, heads).y), params.ln1_gamma,
                          params.ln1_beta, eps);
    Tensor ff = matmul(gelu(matmul(h, params.ffn_w1)), params.ffn_w2);
    return layer_norm(add(h, ff), params.ln2_gamma, params.ln2_beta, eps);
}

GraphormerModel::GraphormerModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config_.hidden_dim;
    const std::size_t H = config_.heads;
    const VocabConfig& vc = config_.vocab;

    if (config_.mode == GraphMode::kGraph2D) {
        node_embed_ = trunc_normal(rng, {vc.node_vocab, d});
        degree_embed_ = trunc_normal(rng, {static_cast<std::size_t>(vc.max_degree) + 1, d});
        spatial_table_ = trunc_normal(rng, {static_cast<std::size_t>(vc.max_dist) + 2, H});
        edge_embed_ = trunc_normal(rng, {vc.edge_vocab, vc.edge_dim});
        edge_pos_weights_ =
            trunc_normal(rng, {static_cast<std::size_t>(vc.max_dist), vc.edge_dim, H});
        if (config_.use_graph_token) {
            token_embed_ = trunc_normal(rng, {1, d});
            token_bias_ = trunc_normal(rng, {H});
        }
    } else {
        atom_embed_ = trunc_normal(rng, {vc.atom_vocab, d});
        tag_embed_ = trunc_normal(rng, {2, d});
        centrality_proj_ = trunc_normal(rng, {config_.gbf.num_basis, d});
        gbf_w1_ = trunc_normal(rng, {config_.gbf.num_basis, config_.gbf_hidden_width()});
        gbf_b1_ = const_param({config_.gbf_hidden_width()}, 0.0);
        gbf_w2_ = trunc_normal(rng, {config_.gbf_hidden_width(), H});
    }

    blocks_.resize(config_.layers);
    for (auto& blk : blocks_) {
        blk.wq = trunc_normal(rng, {d, d});
        blk.wk = trunc_normal(rng, {d, d});
        blk.wv = trunc_normal(rng, {d, d});
        blk.wo = trunc_normal(rng, {d, d});
        blk.ffn_w1 = trunc_normal(rng, {d, config_.ffn_width()});
        blk.ffn_w2 = trunc_normal(rng, {config_.ffn_width(), d});
        blk.ln1_gamma = const_param({d}, 1.0);
        blk.ln1_beta = const_param({d}, 0.0);
        blk.ln2_gamma = const_param({d}, 1.0);
        blk.ln2_beta = const_param({d}, 0.0);
    }
    if (config_.ln_placement == LnPlacement::kPre) {
        final_ln_gamma_ = const_param({d}, 1.0);
        final_ln_beta_ = const_param({d}, 0.0);
    }

    scalar_head_.w1 = trunc_normal(rng, {d, d});
    scalar_head_.b1 = const_param({d}, 0.0);
    scalar_head_.w2 = trunc_normal(rng, {d, 1});
    scalar_head_.b2 = const_param({1}, 0.0);

    if (config_.mode == GraphMode::kGraph3D) {
        eq_head_.wq = trunc_normal(rng, {d, d});
        eq_head_.wk = trunc_normal(rng, {d, d});
        eq_head_.wv = trunc_normal(rng, {d, d});
        const std::size_t n_dirs = config_.share_direction_projections ? 1 : 3;
        for (std::size_t i = 0; i < n_dirs; ++i) {
            eq_head_.direction_proj.push_back(trunc_normal(rng, {d, 1}));
        }
    }
}

std::vector<std::pair<std::string, Tensor>> GraphormerModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto push = [&](const std::string& name, const Tensor& t) {
        if (t.defined()) out.emplace_back(name, t);
    };
    push("node_embed", node_embed_);
    push("degree_embed", degree_embed_);
    push("spatial_table", spatial_table_);
    push("edge_embed", edge_embed_);
    push("edge_pos_weights", edge_pos_weights_);
    push("token_embed", token_embed_);
    push("token_bias", token_bias_);
    push("atom_embed", atom_embed_);
    push("tag_embed", tag_embed_);
    push("centrality_proj", centrality_proj_);
    push("gbf_w1", gbf_w1_);
    push("gbf_b1", gbf_b1_);
    push("gbf_w2", gbf_w2_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string prefix = "block" + std::to_string(i) + ".";
        push(prefix + "wq", blocks_[i].wq);
        push(prefix + "wk", blocks_[i].wk);
        push(prefix + "wv", blocks_[i].wv);
        push(prefix + "wo", blocks_[i].wo);
        push(prefix + "ffn_w1", blocks_[i].ffn_w1);
        push(prefix + "ffn_w2", blocks_[i].ffn_w2);
        push(prefix + "ln1_gamma", blocks_[i].ln1_gamma);
        push(prefix + "ln1_beta", blocks_[i].ln1_beta);
        push(prefix + "ln2_gamma", blocks_[i].ln2_gamma);
        push(prefix + "ln2_beta", blocks_[i].ln2_beta);
    }
    push("final_ln_gamma", final_ln_gamma_);
    push("final_ln_beta", final_ln_beta_);
    push("scalar_head.w1", scalar_head_.w1);
    push("scalar_head.b1", scalar_head_.b1);
    push("scalar_head.w2", scalar_head_.w2);
    push("scalar_head.b2", scalar_head_.b2);
    push("eq_head.wq", eq_head_.wq);
    push("eq_head.wk", eq_head_.wk);
    push("eq_head.wv", eq_head_.wv);
    for (std::size_t i = 0; i < eq_head_.direction_proj.size(); ++i) {
        push("eq_head.dir" + std::to_string(i), eq_head_.direction_proj[i]);
    }
    return out;
}

void GraphormerModel::zero_grad() const {
    for (auto& [name, t] : named_parameters()) {
        Tensor tm = t;
        tm.zero_grad();
    }
}

Tensor GraphormerModel::encode(const Tensor& x, const std::optional<Tensor>& kv_extra,
                               const Tensor& bias) const {
    Tensor h = x;
    for (const auto& blk : blocks_) {
        h = block_forward(h, kv_extra, bias, blk, config_.heads, config_.ln_placement,
                          config_.ln_eps);
    }
    if (config_.ln_placement == LnPlacement::kPre) {
        h = layer_norm(h, final_ln_gamma_, final_ln_beta_, config_.ln_eps);
    }
    return h;
}

Tensor GraphormerModel::encode_graph(const Graph2D& g) const {
    if (config_.mode != GraphMode::kGraph2D) {
        throw ContractError("encode_graph: model is configured for 3D mode");
    }
    g.validate();
    if (g.n == 0) throw ContractError("encode_graph: empty graph");
    const VocabConfig& vc = config_.vocab;
    for (const auto& nf : g.node_feats) {
        if (nf.size() != vc.node_columns) {
            throw ContractError("encode_graph: node feature columns do not match config");
        }
    }
    for (const auto& e : g.edges) {
        if (e.feats.size() != vc.edge_columns) {
            throw ContractError("encode_graph: edge feature columns do not match config");
        }
    }

    const SpdResult spd = bfs_spd(g, vc.max_dist);
    const auto degrees = degree_ids(g, vc.max_degree);

    Tensor x;
    for (std::size_t c = 0; c < vc.node_columns; ++c) {
        std::vector<std::int64_t> ids(g.n);
        for (std::size_t i = 0; i < g.n; ++i) ids[i] = g.node_feats[i][c];
        Tensor emb = embedding_lookup(node_embed_, ids);
        x = c == 0 ? emb : add(x, emb);
    }
    x = add(x, centrality_embed(degrees, degree_embed_));

    const EdgePathIndex paths =
        build_edge_paths(g, spd, static_cast<std::size_t>(vc.max_dist));
    Tensor bias = add(spatial_bias(spd, spatial_table_),
                      edge_bias(paths, edge_embed_, edge_pos_weights_));

    if (config_.use_graph_token) {
        x = add_graph_token_embeddings(x, token_embed_);
        bias = add_graph_token_bias(bias, token_bias_);
    }
    return encode(x, std::nullopt, bias);
}

Tensor GraphormerModel::predict_graph_target(const Graph2D& g) const {
    Tensor reprs = encode_graph(g);
    Tensor pooled = config_.use_graph_token
                        ? embedding_lookup(reprs, {0})
                        : reshape(reduce_mean(reprs, 0), {1, config_.hidden_dim});
    return reshape(mlp_head(pooled, scalar_head_), {});
}

GraphormerModel::Output3D GraphormerModel::forward_3d_at(const Structure3D& s,
                                                         const std::vector<Vec3>& positions,
                                                         const Tensor* injected_hidden) const {
    if (config_.mode != GraphMode::kGraph3D) {
        throw ContractError("forward_3d: model is configured for 2D mode");
    }
    const std::size_t n = s.size();
    if (n == 0) throw ContractError("forward_3d: empty structure");

    Structure3D working = s;
    working.positions = positions;
    const ExpandedStructure ex =
        working.cell ? pbc_expand(working, config_.gbf.cutoff) : expand_identity(working);
    const std::size_t total = ex.size();

    const Tensor dist = pairwise_distances(ex.positions);
    const Tensor feats = gbf_features(dist, config_.gbf); // [N,N,K]

    Tensor centrality = centrality_3d(feats, centrality_proj_); // [N,d]
    std::vector<std::int64_t> tag_ids(total);
    for (std::size_t i = 0; i < total; ++i) tag_ids[i] = ex.fixed[i] ? 1 : 0;
    Tensor emb = add(add(embedding_lookup(atom_embed_, ex.atoms),
                         embedding_lookup(tag_embed_, tag_ids)),
                     centrality);

    Tensor x_q = emb;
    std::optional<Tensor> x_img;
    if (total > n) {
        x_q = embedding_lookup(emb, iota_ids(0, n));
        x_img = embedding_lookup(emb, iota_ids(n, total));
    }
    if (injected_hidden) x_q = add(x_q, *injected_hidden);

    const Tensor feats_q = total > n ? slice_rows_const(feats, 0, n) : feats;
    Tensor bias = bias_3d(feats_q, gbf_w1_, gbf_b1_, gbf_w2_); // [H,n,N]

    Tensor reprs = encode(x_q, x_img, bias);

    Tensor kv_final = x_img ? concat({reprs, *x_img}, 0) : reprs;
    const Tensor offsets = relative_offsets(ex.positions);
    const Tensor offsets_q = total > n ? slice_rows_const(offsets, 0, n) : offsets;
    Tensor pair_bias = reduce_mean(bias, 0); // [n,N], heads collapsed

    Output3D out;
    out.energy = energy_readout(reprs, std::vector<bool>(n, true), scalar_head_);
    out.displacement = equivariant_vector_head(reprs, kv_final, offsets_q, pair_bias, eq_head_);
    out.node_reprs = reprs;
    return out;
}

GraphormerModel::Output3D GraphormerModel::forward_3d(const Structure3D& s) const {
    s.validate();
    return forward_3d_at(s, s.positions, nullptr);
}

GraphormerModel::Output3D GraphormerModel::recycle_forward(const Structure3D& s,
                                                           std::size_t cycles) const {
    if (cycles < 1) throw ContractError("recycle_forward: cycle count must be >= 1");
    s.validate();

    std::vector<Vec3> positions = s.positions;
    Tensor injected;
    const Tensor* injected_ptr = nullptr;
    for (std::size_t t = 0; t + 1 < cycles; ++t) {
        NoGradScope frozen;
        Output3D out = forward_3d_at(s, positions, injected_ptr);
        const auto& disp = out.displacement.values();
        positions = s.positions;
        for (std::size_t i = 0; i < positions.size(); ++i) {
            for (std::size_t c = 0; c < 3; ++c) positions[i][c] += disp[i * 3 + c];
        }
        if (config_.recycle_hidden) {
            injected = out.node_reprs.detached();
            injected_ptr = &injected;
        }
    }
    return forward_3d_at(s, positions, injected_ptr);
}

} // namespace graphormer
