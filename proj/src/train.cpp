// SPDX-License-Identifier: Apache-2.0

#include "graphormer/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>

#include "graphormer/checkpoint.hpp"
#include "graphormer/heads.hpp"

namespace graphormer {

using nlohmann::json;

void RunConfig::validate() const {
    model.validate();
    if (peak_lr <= 0.0) throw ContractError("run config: peak_lr must be positive");
    if (batch_size < 1) throw ContractError("run config: batch_size must be >= 1");
    if (max_steps < 1) throw ContractError("run config: max_steps must be >= 1");
    if (warmup() >= max_steps) {
        throw ContractError("run config: warmup_steps must be smaller than max_steps");
    }
    if (eval_interval < 1) throw ContractError("run config: eval_interval must be >= 1");
}

namespace {

std::string mode_name(GraphMode m) { return m == GraphMode::kGraph2D ? "graph2d" : "graph3d"; }

GraphMode mode_from_name(const std::string& s) {
    if (s == "graph2d") return GraphMode::kGraph2D;
    if (s == "graph3d") return GraphMode::kGraph3D;
    throw ParseError("run config: unknown mode '" + s + "'");
}

std::string placement_name(LnPlacement p) { return p == LnPlacement::kPre ? "pre" : "post"; }

LnPlacement placement_from_name(const std::string& s) {
    if (s == "pre") return LnPlacement::kPre;
    if (s == "post") return LnPlacement::kPost;
    throw ParseError("run config: unknown ln_placement '" + s + "'");
}

} // namespace

json run_config_to_json(const RunConfig& cfg) {
    json j;
    json m;
    m["mode"] = mode_name(cfg.model.mode);
    m["layers"] = cfg.model.layers;
    m["hidden_dim"] = cfg.model.hidden_dim;
    m["heads"] = cfg.model.heads;
    m["ffn_dim"] = cfg.model.ffn_dim;
    m["ln_placement"] = placement_name(cfg.model.ln_placement);
    m["ln_eps"] = cfg.model.ln_eps;
    m["recycle_count"] = cfg.model.recycle_count;
    m["recycle_hidden"] = cfg.model.recycle_hidden;
    m["dropout"] = cfg.model.dropout;
    m["gbf"] = {{"num_basis", cfg.model.gbf.num_basis}, {"cutoff", cfg.model.gbf.cutoff}};
    m["gbf_hidden"] = cfg.model.gbf_hidden;
    m["use_graph_token"] = cfg.model.use_graph_token;
    m["share_direction_projections"] = cfg.model.share_direction_projections;
    m["vocab"] = {{"node_vocab", cfg.model.vocab.node_vocab},
                  {"node_columns", cfg.model.vocab.node_columns},
                  {"edge_vocab", cfg.model.vocab.edge_vocab},
                  {"edge_columns", cfg.model.vocab.edge_columns},
                  {"edge_dim", cfg.model.vocab.edge_dim},
                  {"max_degree", cfg.model.vocab.max_degree},
                  {"max_dist", cfg.model.vocab.max_dist},
                  {"atom_vocab", cfg.model.vocab.atom_vocab}};
    j["model"] = m;
    j["peak_lr"] = cfg.peak_lr;
    j["weight_decay"] = cfg.weight_decay;
    j["batch_size"] = cfg.batch_size;
    j["max_steps"] = cfg.max_steps;
    j["warmup_steps"] = cfg.warmup_steps;
    j["seed"] = cfg.seed;
    j["aux_weight"] = cfg.aux_weight;
    j["train_data"] = cfg.train_data;
    j["valid_data"] = cfg.valid_data;
    j["eval_interval"] = cfg.eval_interval;
    j["out_dir"] = cfg.out_dir;
    return j;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig cfg;
    if (j.contains("model")) {
        const json& m = j["model"];
        cfg.model.mode = mode_from_name(m.value("mode", mode_name(cfg.model.mode)));
        cfg.model.layers = m.value("layers", cfg.model.layers);
        cfg.model.hidden_dim = m.value("hidden_dim", cfg.model.hidden_dim);
        cfg.model.heads = m.value("heads", cfg.model.heads);
        cfg.model.ffn_dim = m.value("ffn_dim", cfg.model.ffn_dim);
        cfg.model.ln_placement =
            placement_from_name(m.value("ln_placement", placement_name(cfg.model.ln_placement)));
        cfg.model.ln_eps = m.value("ln_eps", cfg.model.ln_eps);
        cfg.model.recycle_count = m.value("recycle_count", cfg.model.recycle_count);
        cfg.model.recycle_hidden = m.value("recycle_hidden", cfg.model.recycle_hidden);
        cfg.model.dropout = m.value("dropout", cfg.model.dropout);
        if (m.contains("gbf")) {
            cfg.model.gbf.num_basis = m["gbf"].value("num_basis", cfg.model.gbf.num_basis);
            cfg.model.gbf.cutoff = m["gbf"].value("cutoff", cfg.model.gbf.cutoff);
        }
        cfg.model.gbf_hidden = m.value("gbf_hidden", cfg.model.gbf_hidden);
        cfg.model.use_graph_token = m.value("use_graph_token", cfg.model.use_graph_token);
        cfg.model.share_direction_projections =
            m.value("share_direction_projections", cfg.model.share_direction_projections);
        if (m.contains("vocab")) {
            const json& v = m["vocab"];
            cfg.model.vocab.node_vocab = v.value("node_vocab", cfg.model.vocab.node_vocab);
            cfg.model.vocab.node_columns = v.value("node_columns", cfg.model.vocab.node_columns);
            cfg.model.vocab.edge_vocab = v.value("edge_vocab", cfg.model.vocab.edge_vocab);
            cfg.model.vocab.edge_columns = v.value("edge_columns", cfg.model.vocab.edge_columns);
            cfg.model.vocab.edge_dim = v.value("edge_dim", cfg.model.vocab.edge_dim);
            cfg.model.vocab.max_degree = v.value("max_degree", cfg.model.vocab.max_degree);
            cfg.model.vocab.max_dist = v.value("max_dist", cfg.model.vocab.max_dist);
            cfg.model.vocab.atom_vocab = v.value("atom_vocab", cfg.model.vocab.atom_vocab);
        }
    }
    cfg.peak_lr = j.value("peak_lr", cfg.peak_lr);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.max_steps = j.value("max_steps", cfg.max_steps);
    cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.aux_weight = j.value("aux_weight", cfg.aux_weight);
    cfg.train_data = j.value("train_data", cfg.train_data);
    cfg.valid_data = j.value("valid_data", cfg.valid_data);
    cfg.eval_interval = j.value("eval_interval", cfg.eval_interval);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    return cfg;
}

Tensor training_loss(const GraphormerModel& model, const DatasetRecord& rec, double aux_weight,
                     double target_mean, double target_std, bool use_recycling) {
    rec.validate();
    if (rec.is_2d()) {
        if (model.config().mode != GraphMode::kGraph2D) {
            throw ContractError("training_loss: 2D record fed to a 3D model");
        }
        Tensor pred = model.predict_graph_target(*rec.graph);
        const double target = (*rec.graph_target - target_mean) / target_std;
        return mae_loss(pred, Tensor::scalar(target));
    }
    if (model.config().mode != GraphMode::kGraph3D) {
        throw ContractError("training_loss: 3D record fed to a 2D model");
    }
    const Structure3D& s = *rec.structure;
    if (!s.energy) throw DataError("training_loss: 3D record has no energy target");
    if (aux_weight > 0.0 && !s.relaxed_positions) {
        throw DataError("training_loss: record has no relaxed_pos but aux weight is positive");
    }
    const auto out = use_recycling
                         ? model.recycle_forward(s, model.config().recycle_count)
                         : model.forward_3d(s);
    const double target = (*s.energy - target_mean) / target_std;
    Tensor energy_term = mae_loss(out.energy, Tensor::scalar(target));
    Tensor aux_term =
        displacement_aux_loss(out.displacement, s.positions, s.relaxed_positions, aux_weight);
    return add(energy_term, aux_term);
}

TargetStats target_stats(const Dataset& data) {
    if (data.empty()) throw DataError("target_stats: empty dataset");
    double sum = 0.0;
    for (const auto& rec : data) {
        rec.validate();
        if (rec.is_2d()) {
            sum += *rec.graph_target;
        } else {
            if (!rec.structure->energy) throw DataError("target_stats: record has no energy");
            sum += *rec.structure->energy;
        }
    }
    const double mean = sum / static_cast<double>(data.size());
    double var = 0.0;
    for (const auto& rec : data) {
        const double t = rec.is_2d() ? *rec.graph_target : *rec.structure->energy;
        var += (t - mean) * (t - mean);
    }
    var /= static_cast<double>(data.size());
    TargetStats stats;
    stats.mean = mean;
    stats.std = var > 1e-24 ? std::sqrt(var) : 1.0;
    return stats;
}

double evaluate(const GraphormerModel& model, const Dataset& data, double target_mean,
                double target_std) {
    if (data.empty()) throw DataError("evaluate: empty dataset");
    NoGradScope frozen;
    double total = 0.0;
    for (const auto& rec : data) {
        rec.validate();
        double raw_pred = 0.0;
        double raw_target = 0.0;
        if (rec.is_2d()) {
            raw_pred = model.predict_graph_target(*rec.graph).item() * target_std + target_mean;
            raw_target = *rec.graph_target;
        } else {
            if (!rec.structure->energy) throw DataError("evaluate: record has no energy target");
            const auto out = model.recycle_forward(*rec.structure, model.config().recycle_count);
            raw_pred = out.energy.item() * target_std + target_mean;
            raw_target = *rec.structure->energy;
        }
        total += std::fabs(raw_pred - raw_target);
    }
    return total / static_cast<double>(data.size());
}

GraphormerModel model_from_checkpoint(const Checkpoint& ckpt) {
    const RunConfig cfg = run_config_from_json(ckpt.run_config);
    GraphormerModel model(cfg.model, cfg.seed);
    auto named = model.named_parameters();
    if (named.size() != ckpt.params.size()) {
        throw DataError("checkpoint: parameter count does not match the stored config");
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& [name, t] = named[i];
        const auto& [saved_name, saved] = ckpt.params[i];
        if (name != saved_name || t.shape() != saved.shape()) {
            throw DataError("checkpoint: parameter '" + saved_name +
                            "' does not match the model built from the stored config");
        }
        Tensor tm = t;
        tm.mutable_values() = saved.values();
    }
    return model;
}

TrainResult train(const RunConfig& cfg, const Dataset& train_data,
                  const std::optional<Dataset>& valid_data, std::ostream& metrics) {
    cfg.validate();
    if (train_data.empty()) throw DataError("train: empty training dataset");

    GraphormerModel model(cfg.model, cfg.seed);
    const auto named = model.named_parameters();
    std::vector<Tensor> params;
    params.reserve(named.size());
    for (const auto& [name, t] : named) params.push_back(t);
    AdamW adam(params);

    const TargetStats stats = target_stats(train_data);
    std::filesystem::create_directories(cfg.out_dir);

    const auto start = std::chrono::steady_clock::now();
    auto emit = [&](std::size_t step, const char* split, double mae, double lr) {
        json line;
        line["step"] = step;
        line["split"] = split;
        line["mae"] = mae;
        line["lr"] = lr;
        line["wall_time_s"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        metrics << line.dump() << '\n';
    };

    auto save = [&](const std::string& path) {
        Checkpoint ckpt;
        ckpt.run_config = run_config_to_json(cfg);
        ckpt.params = model.named_parameters();
        ckpt.has_optimizer = true;
        ckpt.adam_step = adam.step_count();
        ckpt.adam_m1 = adam.moment1();
        ckpt.adam_m2 = adam.moment2();
        ckpt.target_mean = stats.mean;
        ckpt.target_std = stats.std;
        save_checkpoint(path, ckpt);
    };

    TrainResult result;
    result.best_mae = std::numeric_limits<double>::infinity();
    const std::string best_path = cfg.out_dir + "/best.ckpt";
    const std::string last_path = cfg.out_dir + "/last.ckpt";
    std::string last_good;

    const std::size_t n_train = train_data.size();
    for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
        const double lr = lr_schedule(step, cfg.warmup(), cfg.max_steps, cfg.peak_lr);
        try {
            Tape tape;
            TapeScope scope(tape);
            adam.zero_grad();
            Tensor loss;
            for (std::size_t k = 0; k < cfg.batch_size; ++k) {
                const std::size_t idx = ((step - 1) * cfg.batch_size + k) % n_train;
                Tensor item = training_loss(model, train_data[idx], cfg.aux_weight, stats.mean,
                                            stats.std);
                loss = k == 0 ? item : add(loss, item);
            }
            loss = scale(loss, 1.0 / static_cast<double>(cfg.batch_size));
            tape.backward(loss);
            adam.step(lr, cfg.weight_decay);
            result.steps_run = step;

            if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
                const double train_mae = evaluate(model, train_data, stats.mean, stats.std);
                emit(step, "train", train_mae, lr);
                double gate = train_mae;
                std::string gate_split = "train";
                if (valid_data && !valid_data->empty()) {
                    const double valid_mae = evaluate(model, *valid_data, stats.mean, stats.std);
                    emit(step, "valid", valid_mae, lr);
                    gate = valid_mae;
                    gate_split = "valid";
                }
                save(last_path);
                last_good = last_path;
                if (gate < result.best_mae) {
                    result.best_mae = gate;
                    result.best_split = gate_split;
                    save(best_path);
                    result.best_checkpoint = best_path;
                }
            }
        } catch (const NumericError& e) {
            result.aborted = true;
            result.abort_reason = std::string(e.what()) + "; last good checkpoint: " +
                                  (last_good.empty() ? "none" : last_good);
            break;
        }
    }
    if (!result.aborted) {
        save(cfg.out_dir + "/final.ckpt");
        result.final_checkpoint = cfg.out_dir + "/final.ckpt";
    }
    return result;
}

} // namespace graphormer
