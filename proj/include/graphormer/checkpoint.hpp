// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoint: magic, version, a JSON header describing the
// run config and tensor table, then raw little-endian float64 blobs. The
// byte layout is documented in the README.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "graphormer/tensor.hpp"

namespace graphormer {

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    nlohmann::json run_config; // opaque snapshot, restored verbatim
    std::vector<std::pair<std::string, Tensor>> params;

    bool has_optimizer = false;
    std::size_t adam_step = 0;
    std::vector<std::vector<double>> adam_m1, adam_m2;

    double target_mean = 0.0;
    double target_std = 1.0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

} // namespace graphormer
