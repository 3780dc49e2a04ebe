// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "graphormer/checkpoint.hpp"
#include "graphormer/data.hpp"
#include "graphormer/model.hpp"
#include "graphormer/optim.hpp"

namespace graphormer {

struct RunConfig {
    ModelConfig model;
    double peak_lr = 3e-4;
    double weight_decay = 1e-3;
    std::size_t batch_size = 4;
    std::size_t max_steps = 2000;
    std::size_t warmup_steps = 0; // 0 -> 6% of max_steps
    std::uint64_t seed = 1;
    double aux_weight = 1.0;
    std::string train_data;
    std::string valid_data;
    std::size_t eval_interval = 100;
    std::string out_dir = "run";

    std::size_t warmup() const {
        return warmup_steps ? warmup_steps : std::max<std::size_t>(1, max_steps * 6 / 100);
    }
    void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// Single-record training objective in normalized target units. 2D records use
// plain MAE; 3D records use energy MAE plus the weighted displacement term.
// use_recycling=false takes the direct single-pass path, leaving the
// recycling machinery untouched.
Tensor training_loss(const GraphormerModel& model, const DatasetRecord& rec, double aux_weight,
                     double target_mean, double target_std, bool use_recycling = true);

// Raw-unit MAE of the model's scalar prediction over a dataset.
double evaluate(const GraphormerModel& model, const Dataset& data, double target_mean,
                double target_std);

struct TargetStats {
    double mean = 0.0;
    double std = 1.0;
};
TargetStats target_stats(const Dataset& data);

struct TrainResult {
    double best_mae = 0.0;
    std::string best_split;
    std::size_t steps_run = 0;
    std::string best_checkpoint;
    std::string final_checkpoint;
    bool aborted = false;
    std::string abort_reason;
};

// Rebuilds the model a checkpoint was saved from and restores its weights.
GraphormerModel model_from_checkpoint(const Checkpoint& ckpt);

// Runs the training loop, streaming one JSON metric line per record to
// `metrics`. Checkpoints land in cfg.out_dir. On a numeric blow-up the run
// aborts and the result references the last good checkpoint.
TrainResult train(const RunConfig& cfg, const Dataset& train_data,
                  const std::optional<Dataset>& valid_data, std::ostream& metrics);

} // namespace graphormer
