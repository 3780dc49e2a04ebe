// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: train / eval / gradcheck / expand-pbc / synth.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <filesystem>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "graphormer/checkpoint.hpp"
#include "graphormer/checks.hpp"
#include "graphormer/data.hpp"
#include "graphormer/train.hpp"

using namespace graphormer;
using nlohmann::json;

namespace {

int run_train(const std::string& config_path, std::int64_t seed_override) {
    std::ifstream in(config_path);
    if (!in) throw DataError("train: cannot open config " + config_path);
    json cfg_json;
    try {
        cfg_json = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("train: config is not valid JSON: ") + e.what());
    }
    RunConfig cfg = run_config_from_json(cfg_json);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    cfg.validate();

    if (cfg.train_data.empty()) throw DataError("train: config has no train_data path");
    const Dataset train_set = load_dataset(cfg.train_data, cfg.model.mode);
    std::optional<Dataset> valid_set;
    if (!cfg.valid_data.empty()) valid_set = load_dataset(cfg.valid_data, cfg.model.mode);

    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream metrics(cfg.out_dir + "/metrics.jsonl");
    if (!metrics) throw DataError("train: cannot open metrics file in " + cfg.out_dir);

    const TrainResult result = train(cfg, train_set, valid_set, metrics);
    if (result.aborted) {
        std::cerr << json{{"error", "train_aborted"}, {"message", result.abort_reason}}.dump()
                  << '\n';
        return 1;
    }
    json summary{{"steps", result.steps_run},
                 {"best_mae", result.best_mae},
                 {"best_split", result.best_split},
                 {"best_checkpoint", result.best_checkpoint},
                 {"final_checkpoint", result.final_checkpoint},
                 {"metrics", cfg.out_dir + "/metrics.jsonl"}};
    std::cout << summary.dump() << '\n';
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_path) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const GraphormerModel model = model_from_checkpoint(ckpt);
    const Dataset data = load_dataset(data_path, model.config().mode);
    const double mae = evaluate(model, data, ckpt.target_mean, ckpt.target_std);
    std::cout << json{{"mae", mae}, {"count", data.size()}}.dump() << '\n';
    return 0;
}

int run_gradcheck(const std::string& module) {
    const auto results = run_grad_checks(module);
    bool all_passed = true;
    for (const auto& r : results) {
        std::cout << json{{"check", r.name},
                          {"max_rel_error", r.max_rel_error},
                          {"threshold", r.threshold},
                          {"passed", r.passed}}
                         .dump()
                  << '\n';
        all_passed = all_passed && r.passed;
    }
    if (!all_passed) {
        std::cerr << json{{"error", "gradcheck_failed"},
                          {"message", "at least one gradient check exceeded its threshold"}}
                         .dump()
                  << '\n';
        return 1;
    }
    return 0;
}

int run_expand(const std::string& data_path, double cutoff, const std::string& out_path) {
    const Dataset data = load_dataset(data_path, GraphMode::kGraph3D);
    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw DataError("expand-pbc: cannot open " + out_path);
        out = &file;
    }
    for (const auto& rec : data) {
        const Structure3D& s = *rec.structure;
        const ExpandedStructure e = s.cell ? pbc_expand(s, cutoff) : expand_identity(s);
        json line;
        line["atoms"] = e.atoms;
        json pos = json::array();
        for (const auto& p : e.positions) pos.push_back({p[0], p[1], p[2]});
        line["pos"] = pos;
        line["origin_index"] = e.origin_index;
        json img = json::array();
        for (bool b : e.is_image) img.push_back(b);
        line["is_image"] = img;
        line["n_original"] = e.n_original;
        *out << line.dump() << '\n';
    }
    return 0;
}

int run_synth(const std::string& kind, std::size_t count, std::uint64_t seed,
              const std::string& out_path) {
    const Dataset data = synth_generate(synth_kind_from_string(kind), count, seed);
    save_dataset(out_path, data);
    std::cout << json{{"written", data.size()}, {"path", out_path}}.dump() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph transformer for molecular property prediction (2D and 3D)"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON run config");
    std::string config_path;
    std::int64_t seed_override = -1;
    train_cmd->add_option("--config", config_path, "Run config JSON path")->required();
    train_cmd->add_option("--seed", seed_override, "Override the config seed");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string ckpt_path, eval_data;
    eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset path (jsonl)")->required();

    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    std::string module = "all";
    grad_cmd->add_option("--module", module,
                         "tensor|graph2d|geometry3d|transformer|heads|all");

    auto* expand_cmd = app.add_subcommand("expand-pbc", "Expand periodic images within a cutoff");
    std::string expand_data, expand_out;
    double cutoff = 5.0;
    expand_cmd->add_option("--data", expand_data, "Dataset path (jsonl)")->required();
    expand_cmd->add_option("--cutoff", cutoff, "Cutoff distance")->required();
    expand_cmd->add_option("--out", expand_out, "Output path (defaults to stdout)");

    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
    std::string kind = "lj";
    std::size_t count = 16;
    std::uint64_t synth_seed = 1;
    std::string synth_out;
    synth_cmd->add_option("--kind", kind, "lj|periodic|graph2d");
    synth_cmd->add_option("--count", count, "Number of records");
    synth_cmd->add_option("--seed", synth_seed, "Generator seed");
    synth_cmd->add_option("--out", synth_out, "Output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return run_train(config_path, seed_override);
        if (eval_cmd->parsed()) return run_eval(ckpt_path, eval_data);
        if (grad_cmd->parsed()) return run_gradcheck(module);
        if (expand_cmd->parsed()) return run_expand(expand_data, cutoff, expand_out);
        if (synth_cmd->parsed()) return run_synth(kind, count, synth_seed, synth_out);
    } catch (const Error& e) {
        std::cerr << json{{"error", "runtime"}, {"message", e.what()}}.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return 1;
    }
    return 0;
}
