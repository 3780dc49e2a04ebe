// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "graphormer/gradcheck.hpp"
#include "graphormer/model.hpp"
#include "support.hpp"

using namespace graphormer;
using namespace graphormer::testing;

namespace {

BlockParams random_block(Rng& rng, std::size_t d, std::size_t ffn, bool requires_grad = false) {
    BlockParams p;
    auto make = [&](Shape shape) {
        return Tensor::from(shape, random_values(rng, numel_of(shape), 0.3), requires_grad);
    };
    p.wq = make({d, d});
    p.wk = make({d, d});
    p.wv = make({d, d});
    p.wo = make({d, d});
    p.ffn_w1 = make({d, ffn});
    p.ffn_w2 = make({ffn, d});
    p.ln1_gamma = Tensor::full({d}, 1.0, requires_grad);
    p.ln1_beta = Tensor::zeros({d}, requires_grad);
    p.ln2_gamma = Tensor::full({d}, 1.0, requires_grad);
    p.ln2_beta = Tensor::zeros({d}, requires_grad);
    return p;
}

void fill(Tensor t, double v) {
    for (auto& x : t.mutable_values()) x = v;
}

} // namespace

TEST_CASE("attention is unchanged by per-row constant bias shifts") {
    Rng rng(301);
    const std::size_t n = 5, d = 8, H = 2;
    Tensor x = Tensor::from({n, d}, random_values(rng, n * d));
    BlockParams p = random_block(rng, d, d);

    std::vector<double> bias_vals = random_values(rng, H * n * n);
    std::vector<double> shifted = bias_vals;
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            const double c = rng.uniform(-5.0, 5.0);
            for (std::size_t j = 0; j < n; ++j) shifted[(h * n + i) * n + j] += c;
        }
    }
    const auto a0 = mha(x, x, Tensor::from({H, n, n}, bias_vals), p, H);
    const auto a1 = mha(x, x, Tensor::from({H, n, n}, shifted), p, H);
    for (std::size_t i = 0; i < a0.attn.numel(); ++i) {
        CHECK(std::fabs(a0.attn.values()[i] - a1.attn.values()[i]) < 1e-12);
    }
}

TEST_CASE("a -1e9 bias off one column masks attention onto it") {
    Rng rng(307);
    const std::size_t n = 4, d = 8, H = 2;
    Tensor x = Tensor::from({n, d}, random_values(rng, n * d));
    BlockParams p = random_block(rng, d, d);
    std::vector<double> bias_vals(H * n * n, -1e9);
    const std::size_t target_col = 2;
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < n; ++i) bias_vals[(h * n + i) * n + target_col] = 0.0;
    }
    const auto out = mha(x, x, Tensor::from({H, n, n}, bias_vals), p, H);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double a = out.attn.at({h, i, j});
                CHECK((j == target_col ? std::fabs(a - 1.0) < 1e-12 : a < 1e-12));
            }
        }
    }
}

TEST_CASE("attention rows sum to one") {
    Rng rng(311);
    const std::size_t n = 6, d = 8, H = 4;
    Tensor x = Tensor::from({n, d}, random_values(rng, n * d));
    const auto out = mha(x, x, Tensor::from({H, n, n}, random_values(rng, H * n * n)),
                         random_block(rng, d, d), H);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) sum += out.attn.at({h, i, j});
            CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("mha gradients match finite differences") {
    Rng rng(313);
    const std::size_t n = 3, d = 4, H = 2;
    Tensor x = Tensor::from({n, d}, random_values(rng, n * d), true);
    BlockParams p = random_block(rng, d, d, true);
    Tensor bias = Tensor::from({H, n, n}, random_values(rng, H * n * n), true);
    auto f = [&]() {
        const auto out = mha(x, x, bias, p, H);
        return reduce_mean(mul(out.y, out.y));
    };
    CHECK(grad_check(f, {x, p.wq, p.wk, p.wv, p.wo, bias}, 1e-6) < 1e-4);
}

TEST_CASE("pre-LN block with zeroed branch outputs is the identity, bitwise") {
    Rng rng(317);
    const std::size_t n = 5, d = 8;
    Tensor x = Tensor::from({n, d}, random_values(rng, n * d));
    BlockParams p = random_block(rng, d, d);
    fill(p.wo, 0.0);
    fill(p.ffn_w2, 0.0);
    Tensor y = block_forward(x, std::nullopt, Tensor::zeros({2, n, n}), p, 2,
                             LnPlacement::kPre, 1e-5);
    CHECK(y.values() == x.values());
}

TEST_CASE("post-LN block with zeroed branch outputs collapses to LN(LN(x))") {
    Rng rng(331);
    const std::size_t n = 5, d = 8;
    Tensor x = Tensor::from({n, d}, random_values(rng, n * d));
    BlockParams p = random_block(rng, d, d);
    fill(p.wo, 0.0);
    fill(p.ffn_w2, 0.0);
    Tensor y = block_forward(x, std::nullopt, Tensor::zeros({2, n, n}), p, 2,
                             LnPlacement::kPost, 1e-5);
    Tensor expect = layer_norm(layer_norm(x, p.ln1_gamma, p.ln1_beta, 1e-5), p.ln2_gamma,
                               p.ln2_beta, 1e-5);
    for (std::size_t i = 0; i < y.numel(); ++i) {
        CHECK(std::fabs(y.values()[i] - expect.values()[i]) < 1e-12);
    }
}

TEST_CASE("pre and post placements disagree on random weights; both pass grad checks") {
    Rng rng(337);
    const std::size_t n = 4, d = 8;
    Tensor x = Tensor::from({n, d}, random_values(rng, n * d));
    BlockParams p = random_block(rng, d, d, true);
    Tensor bias = Tensor::from({2, n, n}, random_values(rng, 2 * n * n));

    Tensor pre = block_forward(x, std::nullopt, bias, p, 2, LnPlacement::kPre, 1e-5);
    Tensor post = block_forward(x, std::nullopt, bias, p, 2, LnPlacement::kPost, 1e-5);
    double max_delta = 0.0;
    for (std::size_t i = 0; i < pre.numel(); ++i) {
        max_delta = std::max(max_delta, std::fabs(pre.values()[i] - post.values()[i]));
    }
    CHECK(max_delta > 1e-3);

    // Probe with a random linear functional: a squared-norm loss is nearly
    // flat after the closing LayerNorm of the post placement.
    Tensor probe = Tensor::from({n, d}, random_values(rng, n * d));
    for (LnPlacement placement : {LnPlacement::kPre, LnPlacement::kPost}) {
        auto f = [&]() {
            Tensor y = block_forward(x, std::nullopt, bias, p, 2, placement, 1e-5);
            return reduce_mean(mul(y, probe));
        };
        CHECK(grad_check(f, {p.wq, p.wo, p.ffn_w1, p.ffn_w2, p.ln1_gamma, p.ln2_beta}, 1e-6) <
              1e-4);
    }
}

TEST_CASE("degenerate configs are rejected") {
    ModelConfig cfg = small_config_3d();
    cfg.layers = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg = small_config_3d();
    cfg.hidden_dim = 9; // not divisible by heads=2
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg = small_config_3d();
    cfg.recycle_count = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    cfg = small_config_3d();
    cfg.dropout = 0.5;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("model rejects records of the wrong mode") {
    Rng rng(347);
    GraphormerModel m3(small_config_3d(), 1);
    CHECK_THROWS_AS(m3.predict_graph_target(random_tree(rng, 4)), ContractError);
    GraphormerModel m2(small_config_2d(), 1);
    CHECK_THROWS_AS(m2.forward_3d(random_molecule(rng, 3)), ContractError);
}

TEST_CASE("permuting atoms permutes node outputs and fixes the energy") {
    Rng rng(349);
    GraphormerModel model(small_config_3d(), 17);
    Structure3D s = random_molecule(rng, 6);

    const auto out = model.forward_3d(s);

    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Structure3D ps;
    ps.atoms.resize(6);
    ps.positions.resize(6);
    for (std::size_t i = 0; i < 6; ++i) {
        ps.atoms[perm[i]] = s.atoms[i];
        ps.positions[perm[i]] = s.positions[i];
    }
    const auto pout = model.forward_3d(ps);

    CHECK(std::fabs(out.energy.item() - pout.energy.item()) < 1e-10);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t c = 0; c < model.config().hidden_dim; ++c) {
            CHECK(std::fabs(out.node_reprs.at({i, c}) - pout.node_reprs.at({perm[i], c})) <
                  1e-10);
        }
    }
}

TEST_CASE("2D prediction is invariant under node relabeling") {
    Rng rng(353);
    GraphormerModel model(small_config_2d(), 23);
    const Graph2D g = random_tree(rng, 7);

    std::vector<std::size_t> perm(g.n);
    for (std::size_t i = 0; i < g.n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Graph2D pg;
    pg.n = g.n;
    pg.node_feats.resize(g.n);
    for (std::size_t i = 0; i < g.n; ++i) pg.node_feats[perm[i]] = g.node_feats[i];
    for (const auto& e : g.edges) {
        std::size_t u = perm[e.u], v = perm[e.v];
        if (u > v) std::swap(u, v);
        pg.edges.push_back({u, v, e.feats});
    }

    const double y0 = model.predict_graph_target(g).item();
    const double y1 = model.predict_graph_target(pg).item();
    CHECK(std::fabs(y0 - y1) < 1e-10);
}

TEST_CASE("3D encode and energy are invariant under rigid motions") {
    Rng rng(359);
    GraphormerModel model(small_config_3d(), 29);
    Structure3D s = random_molecule(rng, 5);
    const auto out = model.forward_3d(s);
    for (int trial = 0; trial < 5; ++trial) {
        Structure3D moved = s;
        moved.positions = rigid_motion(
            s.positions, random_rotation(rng),
            {rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(-6, 6)});
        const auto mout = model.forward_3d(moved);
        CHECK(std::fabs(out.energy.item() - mout.energy.item()) < 1e-8);
        for (std::size_t i = 0; i < out.node_reprs.numel(); ++i) {
            CHECK(std::fabs(out.node_reprs.values()[i] - mout.node_reprs.values()[i]) < 1e-8);
        }
    }
}

TEST_CASE("every parameter receives gradient on a generic batch") {
    Rng rng(367);

    // 3D: free molecule plus a periodic structure with a fixed atom
    GraphormerModel m3(small_config_3d(), 31);
    {
        Tape tape;
        TapeScope scope(tape);
        m3.zero_grad();
        Structure3D a = random_molecule(rng, 5);
        Structure3D b = random_molecule(rng, 3);
        Cell cell;
        cell.rows = {Vec3{3.0, 0, 0}, Vec3{0.2, 3.0, 0}, Vec3{-0.1, 0.3, 3.0}};
        b.cell = cell;
        b.fixed = {true, false, false};
        const auto oa = m3.forward_3d(a);
        const auto ob = m3.forward_3d(b);
        Tensor loss = add(add(oa.energy, ob.energy),
                          add(reduce_sum(mul(oa.displacement, oa.displacement)),
                              reduce_sum(mul(ob.displacement, ob.displacement))));
        tape.backward(loss);
        for (const auto& [name, t] : m3.named_parameters()) {
            REQUIRE_MESSAGE(t.has_grad(), name);
            double norm = 0.0;
            for (double v : t.grad()) norm += std::fabs(v);
            CHECK_MESSAGE(norm > 0.0, name);
        }
    }

    // 2D: one connected tree and one graph with an isolated node so the
    // unreachable bucket is exercised
    GraphormerModel m2(small_config_2d(), 37);
    {
        Tape tape;
        TapeScope scope(tape);
        m2.zero_grad();
        Graph2D a = random_tree(rng, 6);
        Graph2D b = random_tree(rng, 5);
        b.n += 1;
        b.node_feats.push_back({0, 1}); // isolated node
        Tensor loss = add(m2.predict_graph_target(a), m2.predict_graph_target(b));
        tape.backward(loss);
        for (const auto& [name, t] : m2.named_parameters()) {
            REQUIRE_MESSAGE(t.has_grad(), name);
            double norm = 0.0;
            for (double v : t.grad()) norm += std::fabs(v);
            CHECK_MESSAGE(norm > 0.0, name);
        }
    }
}

TEST_CASE("mean readout differs from the token path only at the readout") {
    Rng rng(373);

    ModelConfig with_token = small_config_2d();
    GraphormerModel token_model(with_token, 41);
    const Graph2D g = random_tree(rng, 5);

    // token mode: prediction is exactly the head applied to the token row
    {
        Tensor reprs = token_model.encode_graph(g);
        REQUIRE(reprs.shape()[0] == g.n + 1);
        Tensor token_row = embedding_lookup(reprs, {0});
        const double manual =
            reshape(mlp_head(token_row, token_model.scalar_head()), {}).item();
        CHECK(token_model.predict_graph_target(g).item() == manual);
    }

    // mean mode: same wiring, pooled over all node rows instead
    ModelConfig no_token = small_config_2d();
    no_token.use_graph_token = false;
    GraphormerModel mean_model(no_token, 41);
    {
        Tensor reprs = mean_model.encode_graph(g);
        REQUIRE(reprs.shape()[0] == g.n);
        Tensor pooled = reshape(reduce_mean(reprs, 0), {1, no_token.hidden_dim});
        const double manual =
            reshape(mlp_head(pooled, mean_model.scalar_head()), {}).item();
        CHECK(mean_model.predict_graph_target(g).item() == manual);
    }
}

TEST_CASE("image tokens join attention as keys and values") {
    Rng rng(379);
    GraphormerModel model(small_config_3d(), 43);
    Structure3D s = random_molecule(rng, 3, 1.8);
    Cell cell;
    cell.rows = {Vec3{2.5, 0, 0}, Vec3{0, 2.5, 0}, Vec3{0, 0, 2.5}};
    s.cell = cell;

    const auto out = model.forward_3d(s);
    REQUIRE(out.node_reprs.shape()[0] == 3); // queries stay original atoms
    CHECK(std::isfinite(out.energy.item()));

    // shrinking the cell changes the image set and therefore the outputs
    Structure3D tight = s;
    Cell small_cell;
    small_cell.rows = {Vec3{2.0, 0, 0}, Vec3{0, 2.0, 0}, Vec3{0, 0, 2.0}};
    tight.cell = small_cell;
    const auto tout = model.forward_3d(tight);
    CHECK(std::fabs(out.energy.item() - tout.energy.item()) > 0.0);
}
