// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "graphormer/tensor.hpp"

namespace graphormer {

// Compares tape gradients of a deterministic scalar function against central
// finite differences over every element of every parameter. Returns
//   max over elements of |analytic - cd| / max(|analytic|, |cd|, 1e-8).
// The function is evaluated once under a fresh tape for the analytic pass
// and tape-free for each probe.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  double step = 1e-6);

} // namespace graphormer
