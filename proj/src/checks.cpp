// SPDX-License-Identifier: Apache-2.0

#include "graphormer/checks.hpp"

#include <cmath>

#include "graphormer/gradcheck.hpp"
#include "graphormer/graph2d.hpp"
#include "graphormer/heads.hpp"
#include "graphormer/train.hpp"

namespace graphormer {

namespace {

constexpr double kStep = 1e-6;
constexpr double kThreshold = 1e-4;

std::vector<double> uniform_values(Rng& rng, std::size_t count, double scale) {
    std::vector<double> v(count);
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return v;
}

Tensor uniform_tensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = true) {
    return Tensor::from(shape, uniform_values(rng, numel_of(shape), scale), requires_grad);
}

struct Suite {
    std::vector<CheckResult>& out;
    bool enabled;

    void run(const std::string& name, const std::function<Tensor()>& f,
             std::vector<Tensor> params, double threshold = kThreshold) const {
        if (!enabled) return;
        CheckResult r;
        r.name = name;
        r.threshold = threshold;
        r.max_rel_error = grad_check(f, std::move(params), kStep);
        r.passed = r.max_rel_error < threshold;
        out.push_back(r);
    }
};

void tensor_checks(const Suite& s) {
    Rng rng(811);
    Tensor a = uniform_tensor(rng, {3, 4});
    Tensor b = uniform_tensor(rng, {4, 5});
    Tensor probe_ab = uniform_tensor(rng, {3, 5}, 1.0, false);
    s.run("tensor/matmul",
          [&] { return reduce_sum(mul(matmul(a, b), probe_ab)); }, {a, b});

    Tensor batched = uniform_tensor(rng, {2, 3, 4});
    s.run("tensor/matmul_batched",
          [&] { return reduce_mean(mul(matmul(batched, b), matmul(batched, b))); }, {batched, b});

    Tensor sm_in = uniform_tensor(rng, {4, 6}, 2.0);
    Tensor probe_sm = uniform_tensor(rng, {4, 6}, 1.0, false);
    s.run("tensor/softmax_lastdim",
          [&] { return reduce_sum(mul(softmax_lastdim(sm_in), probe_sm)); }, {sm_in});

    Tensor ln_in = uniform_tensor(rng, {5, 8}, 2.0);
    Tensor gamma = Tensor::from({8}, uniform_values(rng, 8, 0.2), true);
    Tensor beta = Tensor::from({8}, uniform_values(rng, 8, 0.2), true);
    for (auto& g : gamma.mutable_values()) g += 1.0;
    Tensor probe_ln = uniform_tensor(rng, {5, 8}, 1.0, false);
    s.run("tensor/layer_norm",
          [&] { return reduce_sum(mul(layer_norm(ln_in, gamma, beta, 1e-5), probe_ln)); },
          {ln_in, gamma, beta});

    Tensor ge = uniform_tensor(rng, {3, 7}, 2.0);
    s.run("tensor/gelu", [&] { return reduce_sum(mul(gelu(ge), ge)); }, {ge});

    Tensor m = uniform_tensor(rng, {3, 4});
    Tensor row = uniform_tensor(rng, {4});
    Tensor col = uniform_tensor(rng, {3, 1});
    s.run("tensor/add_mul_broadcast",
          [&] { return reduce_sum(mul(add(m, row), col)); }, {m, row, col});
    s.run("tensor/sub_scale",
          [&] { return reduce_mean(mul(sub(m, row), scale(m, 1.7))); }, {m, row});

    Tensor red = uniform_tensor(rng, {2, 3, 4});
    s.run("tensor/reduce_ops",
          [&] {
              Tensor sums = reduce_sum(red, 1);       // [2,4]
              Tensor means = reduce_mean(red, 2);     // [2,3]
              return add(reduce_sum(mul(sums, sums)), reduce_mean(mul(means, means)));
          },
          {red});

    Tensor tr = uniform_tensor(rng, {2, 3, 4});
    s.run("tensor/transpose_reshape_concat",
          [&] {
              Tensor t = transpose(tr, {2, 0, 1});
              Tensor r = reshape(t, {4, 6});
              Tensor j = concat({r, r}, 1);
              return reduce_mean(mul(j, j));
          },
          {tr});

    Tensor table = uniform_tensor(rng, {6, 4});
    const std::vector<std::int64_t> ids{0, 2, 2, 5};
    s.run("tensor/embedding_lookup",
          [&] {
              Tensor rows = embedding_lookup(table, ids);
              return reduce_sum(mul(rows, rows));
          },
          {table});

    // keep |x| components away from the kink
    Tensor ab_in = Tensor::from({5}, {0.7, -1.3, 2.2, -0.4, 1.9}, true);
    s.run("tensor/abs", [&] { return reduce_mean(abs(ab_in)); }, {ab_in});
}

void graph2d_checks(const Suite& s) {
    Rng rng(821);
    Graph2D g;
    g.n = 6;
    for (std::size_t i = 0; i < g.n; ++i) {
        g.node_feats.push_back({rng.uniform_int(0, 3), rng.uniform_int(0, 3)});
    }
    for (std::size_t i = 1; i < g.n; ++i) {
        g.edges.push_back({static_cast<std::size_t>(rng.uniform_int(0, i - 1)), i,
                           {rng.uniform_int(0, 3), rng.uniform_int(0, 3)}});
    }
    const auto spd = bfs_spd(g, 6);
    const auto paths = build_edge_paths(g, spd, 6);

    Tensor table = uniform_tensor(rng, {8, 2});
    Tensor token_bias = uniform_tensor(rng, {2});
    s.run("graph2d/spatial_and_token_bias",
          [&] {
              Tensor bias = add_graph_token_bias(spatial_bias(spd, table), token_bias);
              return reduce_sum(mul(bias, bias));
          },
          {table, token_bias});

    Tensor embed = uniform_tensor(rng, {4, 3});
    Tensor pos_w = uniform_tensor(rng, {6, 3, 2});
    s.run("graph2d/edge_bias",
          [&] {
              Tensor bias = edge_bias(paths, embed, pos_w);
              return reduce_sum(mul(bias, bias));
          },
          {embed, pos_w});

    // full 2-layer model
    ModelConfig cfg;
    cfg.mode = GraphMode::kGraph2D;
    cfg.layers = 2;
    cfg.hidden_dim = 8;
    cfg.heads = 2;
    cfg.vocab.node_vocab = 4;
    cfg.vocab.node_columns = 2;
    cfg.vocab.edge_vocab = 4;
    cfg.vocab.edge_columns = 2;
    cfg.vocab.edge_dim = 4;
    cfg.vocab.max_degree = 8;
    cfg.vocab.max_dist = 6;
    GraphormerModel model(cfg, 97);
    Rng init(823);
    randomize_parameters(model, init);
    const double target = model.predict_graph_target(g).item() + 0.7;

    std::vector<Tensor> params;
    for (const auto& [name, t] : model.named_parameters()) params.push_back(t);
    s.run("graph2d/full_2layer_model",
          [&] { return mae_loss(model.predict_graph_target(g), Tensor::scalar(target)); },
          params);
}

void geometry3d_checks(const Suite& s) {
    Rng rng(827);
    GbfBank bank;
    bank.num_basis = 6;
    bank.cutoff = 6.0;
    // distances spanning the whole bank so every basis column carries signal
    std::vector<Vec3> pos;
    for (int i = 0; i < 4; ++i) {
        pos.push_back({rng.uniform(0, 3.4), rng.uniform(0, 3.4), rng.uniform(0, 3.4)});
    }
    Tensor feats = gbf_features(pairwise_distances(pos), bank);

    Tensor w1 = uniform_tensor(rng, {6, 5});
    Tensor b1 = uniform_tensor(rng, {5}, 0.3);
    Tensor w2 = uniform_tensor(rng, {5, 2});
    Tensor probe = uniform_tensor(rng, {2, 4, 4}, 1.0, false);
    s.run("geometry3d/bias_3d",
          [&] { return reduce_sum(mul(bias_3d(feats, w1, b1, w2), probe)); },
          {w1, b1, w2});

    Tensor proj = uniform_tensor(rng, {6, 3});
    s.run("geometry3d/centrality_3d",
          [&] {
              Tensor c = centrality_3d(feats, proj);
              return reduce_sum(mul(c, c));
          },
          {proj});
}

void transformer_checks(const Suite& s) {
    Rng rng(829);
    const std::size_t n = 4, d = 8, H = 2;
    Tensor x = uniform_tensor(rng, {n, d});
    BlockParams p;
    p.wq = uniform_tensor(rng, {d, d}, 0.5);
    p.wk = uniform_tensor(rng, {d, d}, 0.5);
    p.wv = uniform_tensor(rng, {d, d}, 0.5);
    p.wo = uniform_tensor(rng, {d, d}, 0.5);
    p.ffn_w1 = uniform_tensor(rng, {d, d}, 0.5);
    p.ffn_w2 = uniform_tensor(rng, {d, d}, 0.5);
    p.ln1_gamma = Tensor::full({d}, 1.0, true);
    p.ln1_beta = Tensor::zeros({d}, true);
    p.ln2_gamma = Tensor::full({d}, 1.0, true);
    p.ln2_beta = Tensor::zeros({d}, true);
    Tensor bias = uniform_tensor(rng, {H, n, n});
    Tensor probe = uniform_tensor(rng, {n, d}, 1.0, false);

    s.run("transformer/mha",
          [&] {
              const auto out = mha(x, x, bias, p, H);
              return reduce_sum(mul(out.y, probe));
          },
          {x, p.wq, p.wk, p.wv, p.wo, bias});
    s.run("transformer/block_pre",
          [&] {
              Tensor y = block_forward(x, std::nullopt, bias, p, H, LnPlacement::kPre, 1e-5);
              return reduce_sum(mul(y, probe));
          },
          {x, p.wq, p.wo, p.ffn_w1, p.ffn_w2, p.ln1_gamma, p.ln2_beta, bias});
    s.run("transformer/block_post",
          [&] {
              Tensor y = block_forward(x, std::nullopt, bias, p, H, LnPlacement::kPost, 1e-5);
              return reduce_sum(mul(y, probe));
          },
          {x, p.wq, p.wo, p.ffn_w1, p.ffn_w2, p.ln1_gamma, p.ln2_beta, bias});
}

void heads_checks(const Suite& s) {
    Rng rng(839);

    Tensor pred = Tensor::from({3}, {1.2, -0.8, 2.1}, true);
    Tensor target = Tensor::from({3}, {0.1, 0.4, -1.0});
    s.run("heads/mae_loss", [&] { return mae_loss(pred, target); }, {pred});

    // full 2-layer 3D model with the combined objective (free + periodic)
    ModelConfig cfg;
    cfg.mode = GraphMode::kGraph3D;
    cfg.layers = 2;
    cfg.hidden_dim = 8;
    cfg.heads = 2;
    cfg.gbf.num_basis = 6;
    cfg.gbf.cutoff = 3.0; // keeps the periodic probe's expansion small
    cfg.gbf_hidden = 6;
    cfg.vocab.atom_vocab = 12;
    GraphormerModel model(cfg, 101);
    Rng init(841);
    randomize_parameters(model, init);

    Structure3D mol;
    mol.atoms = {1, 6, 8, 3};
    mol.positions = {{0.1, 0.2, 0.3}, {1.3, 0.4, 0.1}, {0.6, 1.5, 0.8}, {1.8, 1.2, 1.6}};
    {
        NoGradScope frozen;
        const auto out = model.forward_3d(mol);
        mol.energy = out.energy.item() + 0.9;
        std::vector<Vec3> relaxed = mol.positions;
        for (std::size_t i = 0; i < relaxed.size(); ++i) {
            for (std::size_t c = 0; c < 3; ++c) {
                relaxed[i][c] += out.displacement.at({i, c}) + ((i + c) % 2 ? 0.35 : -0.45);
            }
        }
        mol.relaxed_positions = relaxed;
    }
    std::vector<Tensor> params;
    for (const auto& [name, t] : model.named_parameters()) params.push_back(t);
    s.run("heads/full_2layer_3d_model",
          [&] { return training_loss(model, DatasetRecord{std::nullopt, std::nullopt, mol}, 1.0,
                                     0.0, 1.0, false); },
          params);

    Structure3D crystal = mol;
    Cell cell;
    cell.rows = {Vec3{3.2, 0, 0}, Vec3{0.3, 3.2, 0}, Vec3{-0.2, 0.1, 3.2}};
    crystal.cell = cell;
    crystal.fixed = {true, false, false, false};
    {
        NoGradScope frozen;
        const auto out = model.forward_3d(crystal);
        crystal.energy = out.energy.item() - 1.1;
        std::vector<Vec3> relaxed = crystal.positions;
        for (std::size_t i = 0; i < relaxed.size(); ++i) {
            for (std::size_t c = 0; c < 3; ++c) {
                relaxed[i][c] += out.displacement.at({i, c}) + ((i + c) % 2 ? -0.3 : 0.4);
            }
        }
        crystal.relaxed_positions = relaxed;
    }
    s.run("heads/full_model_periodic",
          [&] { return training_loss(model, DatasetRecord{std::nullopt, std::nullopt, crystal},
                                     1.0, 0.0, 1.0, false); },
          params);
}

} // namespace

void randomize_parameters(const GraphormerModel& model, Rng& rng, double scale) {
    for (const auto& [name, t] : model.named_parameters()) {
        Tensor tm = t;
        const bool is_gain = name.find("gamma") != std::string::npos;
        // score-side paths are damped by the softmax jacobian; larger weights
        // keep their gradients above finite-difference noise
        const bool score_side = name.rfind("gbf_", 0) == 0 ||
                                name.find(".wq") != std::string::npos ||
                                name.find(".wk") != std::string::npos;
        const double s = score_side ? 3.0 * scale : scale;
        for (auto& v : tm.mutable_values()) {
            v = is_gain ? 1.0 + rng.uniform(-0.1, 0.1) : rng.uniform(-s, s);
        }
    }
}

std::vector<CheckResult> run_grad_checks(const std::string& module_filter) {
    const bool all = module_filter == "all";
    if (!all && module_filter != "tensor" && module_filter != "graph2d" &&
        module_filter != "geometry3d" && module_filter != "transformer" &&
        module_filter != "heads") {
        throw ContractError("gradcheck: unknown module '" + module_filter + "'");
    }
    std::vector<CheckResult> results;
    tensor_checks({results, all || module_filter == "tensor"});
    graph2d_checks({results, all || module_filter == "graph2d"});
    geometry3d_checks({results, all || module_filter == "geometry3d"});
    transformer_checks({results, all || module_filter == "transformer"});
    heads_checks({results, all || module_filter == "heads"});
    return results;
}

} // namespace graphormer
