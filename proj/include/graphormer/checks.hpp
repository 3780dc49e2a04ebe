// SPDX-License-Identifier: Apache-2.0
//
// The built-in gradient-integrity suite behind the `gradcheck` CLI command:
// finite-difference checks over every differentiable op and over full small
// 2-layer models in both modes.

#pragma once

#include <string>
#include <vector>

#include "graphormer/model.hpp"
#include "graphormer/rng.hpp"

namespace graphormer {

struct CheckResult {
    std::string name;
    double max_rel_error = 0.0;
    double threshold = 1e-4;
    bool passed = false;
};

// module_filter: one of "all", "tensor", "graph2d", "geometry3d",
// "transformer", "heads". Unknown names throw.
std::vector<CheckResult> run_grad_checks(const std::string& module_filter = "all");

// Re-draws parameters at a healthy scale (LN gains near one, everything else
// uniform in [-scale, scale]). The default 0.02 init leaves deep-path
// gradients below finite-difference noise, which would make the probes
// meaningless.
void randomize_parameters(const GraphormerModel& model, Rng& rng, double scale = 0.4);

} // namespace graphormer
