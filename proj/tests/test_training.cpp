// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "graphormer/checkpoint.hpp"
#include "graphormer/data.hpp"
#include "graphormer/optim.hpp"
#include "graphormer/train.hpp"
#include "support.hpp"

using namespace graphormer;
using namespace graphormer::testing;
using nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("graphormer_test_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

RunConfig tiny_run(const std::filesystem::path& dir) {
    RunConfig cfg;
    cfg.model = small_config_3d(1, 8, 2);
    cfg.model.gbf.num_basis = 8;
    cfg.model.gbf_hidden = 8;
    cfg.peak_lr = 1e-3;
    cfg.weight_decay = 1e-3;
    cfg.batch_size = 2;
    cfg.max_steps = 20;
    cfg.warmup_steps = 2;
    cfg.eval_interval = 5;
    cfg.seed = 7;
    cfg.aux_weight = 1.0;
    cfg.out_dir = dir.string();
    return cfg;
}

// Independent re-implementation of the 12-6 sum for cross-checking.
double lj_energy_reference(const std::vector<Vec3>& pos) {
    double e = 0.0;
    for (std::size_t i = 0; i < pos.size(); ++i) {
        for (std::size_t j = i + 1; j < pos.size(); ++j) {
            double r2 = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                r2 += (pos[i][c] - pos[j][c]) * (pos[i][c] - pos[j][c]);
            }
            const double s6 = 1.0 / (r2 * r2 * r2);
            e += 4.0 * (s6 * s6 - s6);
        }
    }
    return e;
}

std::vector<std::string> strip_wall_time(const std::string& log) {
    std::vector<std::string> out;
    std::istringstream in(log);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        j.erase("wall_time_s");
        out.push_back(j.dump());
    }
    return out;
}

} // namespace

TEST_CASE("adam leaves parameters unchanged with zero grads and zero decay") {
    Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    const auto before = w.values();
    AdamW adam({w});
    adam.step(0.1, 0.0);
    CHECK(w.values() == before);
}

TEST_CASE("adam decay-only step shrinks weights by lr*wd") {
    Tensor w = Tensor::from({2}, {2.0, -4.0}, true);
    AdamW adam({w});
    adam.step(0.1, 0.1);
    CHECK(w.values()[0] == doctest::Approx(2.0 * (1.0 - 0.01)).epsilon(1e-15));
    CHECK(w.values()[1] == doctest::Approx(-4.0 * (1.0 - 0.01)).epsilon(1e-15));
}

TEST_CASE("adam drives a scalar quadratic to its optimum") {
    Tensor w = Tensor::scalar(0.0, true);
    AdamW adam({w});
    const std::size_t steps = 500;
    for (std::size_t t = 1; t <= steps; ++t) {
        Tape tape;
        TapeScope scope(tape);
        adam.zero_grad();
        Tensor diff = sub(w, Tensor::scalar(3.0));
        tape.backward(mul(diff, diff));
        adam.step(lr_schedule(t, 10, steps, 0.05), 0.0);
    }
    CHECK(std::fabs(w.item() - 3.0) < 1e-2);
}

TEST_CASE("lr schedule hits its corner values") {
    CHECK(lr_schedule(100, 100, 1000, 3e-4) == 3e-4);
    CHECK(lr_schedule(1000, 100, 1000, 3e-4) == 0.0);
    CHECK(lr_schedule(50, 100, 1000, 3e-4) == doctest::Approx(1.5e-4).epsilon(1e-15));
    CHECK(lr_schedule(550, 100, 1000, 3e-4) == doctest::Approx(1.5e-4).epsilon(1e-12));
}

TEST_CASE("lj oracle: pair minimum and an independent re-evaluation") {
    const double rmin = std::pow(2.0, 1.0 / 6.0);
    CHECK(std::fabs(lj_energy({{0, 0, 0}, {rmin, 0, 0}}) - (-1.0)) < 1e-12);

    Rng rng(601);
    std::vector<Vec3> pos;
    for (int i = 0; i < 6; ++i) {
        pos.push_back({rng.uniform(0, 2.5), rng.uniform(0, 2.5), rng.uniform(0, 2.5)});
    }
    CHECK(lj_energy(pos) == doctest::Approx(lj_energy_reference(pos)).epsilon(1e-12));

    // forces are the negative gradient of the energy (finite differences)
    const auto forces = lj_forces(pos);
    const double h = 1e-6;
    for (std::size_t i = 0; i < pos.size(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            auto up = pos, down = pos;
            up[i][c] += h;
            down[i][c] -= h;
            const double cd = (lj_energy(up) - lj_energy(down)) / (2.0 * h);
            CHECK(std::fabs(-cd - forces[i][c]) <
                  1e-4 * std::max(1.0, std::fabs(forces[i][c])));
        }
    }
}

TEST_CASE("graph2d toy target matches the documented statistic") {
    // triangle plus an isolated node: 2*3/4 + 1/(2*4)
    Graph2D g;
    g.n = 4;
    g.node_feats = {{0, 0}, {0, 0}, {0, 0}, {0, 0}};
    g.edges = {{0, 1, {0, 0}}, {1, 2, {0, 0}}, {0, 2, {0, 0}}};
    CHECK(graph2d_toy_target(g) == doctest::Approx(1.625).epsilon(1e-15));
}

TEST_CASE("synthetic datasets are deterministic and self-consistent") {
    const auto a = synth_generate(SynthKind::kLjClusters, 4, 99);
    const auto b = synth_generate(SynthKind::kLjClusters, 4, 99);
    REQUIRE(a.size() == 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(record_to_json_line(a[i]) == record_to_json_line(b[i]));
        const auto& s = *a[i].structure;
        CHECK(*s.energy == doctest::Approx(lj_energy_reference(s.positions)).epsilon(1e-12));
        REQUIRE(s.relaxed_positions.has_value());
        // relaxation lowers the oracle energy
        CHECK(lj_energy_reference(*s.relaxed_positions) < *s.energy);
    }

    const auto p = synth_generate(SynthKind::kPeriodicToy, 3, 17);
    for (const auto& rec : p) {
        REQUIRE(rec.structure->cell.has_value());
        CHECK(rec.structure->fixed[0]);
        CHECK(std::isfinite(*rec.structure->energy));
    }

    const auto g = synth_generate(SynthKind::kGraph2DToy, 3, 31);
    for (const auto& rec : g) {
        CHECK(*rec.graph_target == doctest::Approx(graph2d_toy_target(*rec.graph)));
    }
}

TEST_CASE("dataset round-trips exactly through the line format") {
    const auto dir = temp_dir("roundtrip");
    auto data = synth_generate(SynthKind::kLjClusters, 2, 41);
    auto periodic = synth_generate(SynthKind::kPeriodicToy, 2, 43);
    data.insert(data.end(), periodic.begin(), periodic.end());
    const auto path = (dir / "data.jsonl").string();
    save_dataset(path, data);
    const auto loaded = load_dataset(path, GraphMode::kGraph3D);
    REQUIRE(loaded.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(record_to_json_line(loaded[i]) == record_to_json_line(data[i]));
        CHECK(loaded[i].structure->positions == data[i].structure->positions); // bitwise
    }

    const auto gpath = (dir / "graphs.jsonl").string();
    const auto graphs = synth_generate(SynthKind::kGraph2DToy, 3, 47);
    save_dataset(gpath, graphs);
    const auto gloaded = load_dataset(gpath, GraphMode::kGraph2D);
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        CHECK(record_to_json_line(gloaded[i]) == record_to_json_line(graphs[i]));
    }

    std::ofstream(dir / "empty.jsonl").close();
    CHECK(load_dataset((dir / "empty.jsonl").string(), GraphMode::kGraph3D).empty());
}

TEST_CASE("malformed records report line numbers and field paths") {
    const auto dir = temp_dir("malformed");
    {
        std::ofstream out(dir / "bad.jsonl");
        out << R"({"atoms":[1],"pos":[[0,0,0]]})" << '\n';
        out << R"({"atoms":[1],"pos":[[0,0]]})" << '\n'; // short row
    }
    try {
        load_dataset((dir / "bad.jsonl").string(), GraphMode::kGraph3D);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("pos") != std::string::npos);
    }

    {
        std::ofstream out(dir / "notjson.jsonl");
        out << "not json at all" << '\n';
    }
    CHECK_THROWS_AS(load_dataset((dir / "notjson.jsonl").string(), GraphMode::kGraph3D),
                    ParseError);
}

TEST_CASE("missing relaxed positions only matter when the aux weight is positive") {
    GraphormerModel model(small_config_3d(1, 8, 2), 3);
    auto data = synth_generate(SynthKind::kLjClusters, 1, 53);
    data[0].structure->relaxed_positions.reset();
    CHECK_THROWS_AS(training_loss(model, data[0], 1.0, 0.0, 1.0), DataError);
    CHECK(std::isfinite(training_loss(model, data[0], 0.0, 0.0, 1.0).item()));
}

TEST_CASE("two runs with the same seed produce identical metric logs") {
    const auto dir_a = temp_dir("det_a");
    const auto dir_b = temp_dir("det_b");
    const auto data = synth_generate(SynthKind::kLjClusters, 4, 71);

    RunConfig cfg_a = tiny_run(dir_a);
    RunConfig cfg_b = tiny_run(dir_b);

    std::ostringstream log_a, log_b;
    const auto res_a = train(cfg_a, data, std::nullopt, log_a);
    const auto res_b = train(cfg_b, data, std::nullopt, log_b);
    CHECK_FALSE(res_a.aborted);
    CHECK_FALSE(res_b.aborted);
    // wall time is the only nondeterministic field in a metric record
    CHECK(strip_wall_time(log_a.str()) == strip_wall_time(log_b.str()));
    CHECK(res_a.best_mae == res_b.best_mae);
}

TEST_CASE("checkpoints restore the exact evaluation") {
    const auto dir = temp_dir("ckpt");
    const auto data = synth_generate(SynthKind::kLjClusters, 4, 73);
    RunConfig cfg = tiny_run(dir);
    std::ostringstream log;
    const auto result = train(cfg, data, std::nullopt, log);
    REQUIRE_FALSE(result.aborted);
    REQUIRE_FALSE(result.final_checkpoint.empty());

    // last emitted train MAE corresponds to the final parameters
    const auto lines = strip_wall_time(log.str());
    REQUIRE_FALSE(lines.empty());
    const json last = json::parse(lines.back());

    const Checkpoint ckpt = load_checkpoint(result.final_checkpoint);
    GraphormerModel restored = model_from_checkpoint(ckpt);
    const double mae = evaluate(restored, data, ckpt.target_mean, ckpt.target_std);
    CHECK(mae == last.at("mae").get<double>()); // bitwise

    // optimizer state survives the round trip
    CHECK(ckpt.has_optimizer);
    CHECK(ckpt.adam_step == cfg.max_steps);
}

TEST_CASE("loss decreases on a one-sample dataset after warmup") {
    const auto data = synth_generate(SynthKind::kLjClusters, 1, 79);
    const TargetStats stats = target_stats(data);

    ModelConfig mc = small_config_3d(1, 8, 2);
    mc.gbf.num_basis = 8;
    mc.gbf_hidden = 8;
    GraphormerModel model(mc, 7);
    std::vector<Tensor> params;
    for (const auto& [name, t] : model.named_parameters()) params.push_back(t);
    AdamW adam(params);

    // small constant lr after a short warmup keeps the whole window inside
    // the descending regime
    const std::size_t warmup = 10;
    const std::size_t window = 200;
    std::vector<double> losses;
    for (std::size_t step = 1; step <= warmup + window; ++step) {
        Tape tape;
        TapeScope scope(tape);
        adam.zero_grad();
        Tensor loss = training_loss(model, data[0], 1.0, stats.mean, stats.std);
        losses.push_back(loss.item());
        tape.backward(loss);
        const double lr = step <= warmup ? 5e-5 * double(step) / double(warmup) : 5e-5;
        adam.step(lr, 1e-4);
    }
    std::size_t increases = 0;
    for (std::size_t i = warmup + 1; i < losses.size(); ++i) {
        if (losses[i] > losses[i - 1]) ++increases;
    }
    CHECK(increases <= window / 20); // at most 5% non-monotone steps
    CHECK(losses.back() < losses[warmup]);
}

TEST_CASE("numeric blow-ups abort with a reference to the last good checkpoint") {
    const auto dir = temp_dir("abort");
    const auto data = synth_generate(SynthKind::kLjClusters, 2, 83);
    RunConfig cfg = tiny_run(dir);
    cfg.peak_lr = 1e200;
    cfg.warmup_steps = 1;
    cfg.max_steps = 10;
    std::ostringstream log;
    const auto result = train(cfg, data, std::nullopt, log);
    CHECK(result.aborted);
    CHECK(result.abort_reason.find("last good checkpoint") != std::string::npos);
}

TEST_CASE("evaluate rejects an empty dataset") {
    GraphormerModel model(small_config_3d(1, 8, 2), 5);
    CHECK_THROWS_AS(evaluate(model, {}, 0.0, 1.0), DataError);
}

TEST_CASE("checkpoints reject corruption, bad magic, and config mismatches") {
    const auto dir = temp_dir("ckpt_robust");
    const auto data = synth_generate(SynthKind::kLjClusters, 2, 97);
    RunConfig cfg = tiny_run(dir);
    cfg.max_steps = 5;
    cfg.eval_interval = 5;
    std::ostringstream log;
    const auto result = train(cfg, data, std::nullopt, log);
    REQUIRE_FALSE(result.aborted);
    const auto path = result.final_checkpoint;

    // truncation
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        std::ofstream out(dir / "truncated.ckpt", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint((dir / "truncated.ckpt").string()), DataError);

    // wrong magic
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        bytes[0] = 'X';
        std::ofstream out(dir / "badmagic.ckpt", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint((dir / "badmagic.ckpt").string()), DataError);

    // a config that no longer matches the stored tensors
    Checkpoint ckpt = load_checkpoint(path);
    ckpt.run_config["model"]["hidden_dim"] = 16;
    CHECK_THROWS_AS(model_from_checkpoint(ckpt), DataError);
}

TEST_CASE("run config round-trips through json") {
    RunConfig cfg = tiny_run("/tmp/x");
    cfg.model.ln_placement = LnPlacement::kPre;
    cfg.model.recycle_count = 3;
    cfg.valid_data = "valid.jsonl";
    const RunConfig back = run_config_from_json(run_config_to_json(cfg));
    CHECK(back.model.ln_placement == LnPlacement::kPre);
    CHECK(back.model.recycle_count == 3);
    CHECK(back.model.gbf.num_basis == cfg.model.gbf.num_basis);
    CHECK(back.peak_lr == cfg.peak_lr);
    CHECK(back.valid_data == "valid.jsonl");
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("validation split gates the best checkpoint and emits valid records") {
    const auto dir = temp_dir("valid");
    const auto train_set = synth_generate(SynthKind::kLjClusters, 4, 91);
    const auto valid_set = synth_generate(SynthKind::kLjClusters, 2, 92);
    RunConfig cfg = tiny_run(dir);
    std::ostringstream log;
    const auto result = train(cfg, train_set, valid_set, log);
    REQUIRE_FALSE(result.aborted);
    CHECK(result.best_split == "valid");

    bool saw_valid = false;
    double last_valid = 0.0;
    for (const auto& line : strip_wall_time(log.str())) {
        const json j = json::parse(line);
        if (j.at("split") == "valid") {
            saw_valid = true;
            last_valid = j.at("mae").get<double>();
        }
    }
    CHECK(saw_valid);

    const Checkpoint ckpt = load_checkpoint(result.best_checkpoint);
    GraphormerModel restored = model_from_checkpoint(ckpt);
    CHECK(result.best_mae <= last_valid);
    CHECK(evaluate(restored, valid_set, ckpt.target_mean, ckpt.target_std) == result.best_mae);
}

TEST_CASE("restored optimizer state continues training identically") {
    const auto data = synth_generate(SynthKind::kLjClusters, 2, 93);
    const TargetStats stats = target_stats(data);
    ModelConfig mc = small_config_3d(1, 8, 2);

    auto one_step = [&](GraphormerModel& model, AdamW& adam, std::size_t step) {
        Tape tape;
        TapeScope scope(tape);
        adam.zero_grad();
        Tensor loss = training_loss(model, data[step % data.size()], 1.0, stats.mean, stats.std);
        tape.backward(loss);
        adam.step(1e-3, 1e-3);
        return loss.item();
    };
    auto params_of = [](const GraphormerModel& model) {
        std::vector<Tensor> out;
        for (const auto& [name, t] : model.named_parameters()) out.push_back(t);
        return out;
    };

    // reference: 6 uninterrupted steps
    GraphormerModel ref(mc, 55);
    AdamW ref_adam(params_of(ref));
    std::vector<double> ref_losses;
    for (std::size_t s = 0; s < 6; ++s) ref_losses.push_back(one_step(ref, ref_adam, s));

    // same run, snapshotting moments after step 3 and resuming elsewhere
    GraphormerModel a(mc, 55);
    AdamW a_adam(params_of(a));
    std::vector<double> losses;
    for (std::size_t s = 0; s < 3; ++s) losses.push_back(one_step(a, a_adam, s));

    GraphormerModel b(mc, 55);
    auto b_params = params_of(b);
    const auto a_params = params_of(a);
    for (std::size_t i = 0; i < b_params.size(); ++i) {
        b_params[i].mutable_values() = a_params[i].values();
    }
    AdamW b_adam(b_params);
    b_adam.restore(a_adam.step_count(), a_adam.moment1(), a_adam.moment2());
    for (std::size_t s = 3; s < 6; ++s) losses.push_back(one_step(b, b_adam, s));

    CHECK(losses == ref_losses); // bitwise
}

TEST_CASE("training works end to end in 2D mode") {
    const auto dir = temp_dir("train2d");
    const auto data = synth_generate(SynthKind::kGraph2DToy, 6, 89);
    RunConfig cfg;
    cfg.model = small_config_2d(1, 8, 2);
    cfg.model.vocab.node_vocab = 8;
    cfg.model.vocab.edge_vocab = 8;
    cfg.peak_lr = 1e-3;
    cfg.batch_size = 2;
    cfg.max_steps = 12;
    cfg.warmup_steps = 2;
    cfg.eval_interval = 6;
    cfg.out_dir = dir.string();
    std::ostringstream log;
    const auto result = train(cfg, data, std::nullopt, log);
    CHECK_FALSE(result.aborted);
    CHECK(result.steps_run == 12);
    CHECK(std::filesystem::exists(result.final_checkpoint));
}
