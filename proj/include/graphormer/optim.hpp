// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "graphormer/tensor.hpp"

namespace graphormer {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with decoupled weight decay. Parameters without an allocated gradient
// buffer are treated as having zero gradient (decay still applies).
class AdamW {
public:
    using Hyper = AdamHyper;

    explicit AdamW(std::vector<Tensor> params, Hyper hyper = {});

    void step(double lr, double weight_decay);
    void zero_grad();

    std::size_t step_count() const { return step_; }
    const std::vector<std::vector<double>>& moment1() const { return m1_; }
    const std::vector<std::vector<double>>& moment2() const { return m2_; }
    void restore(std::size_t step, std::vector<std::vector<double>> m1,
                 std::vector<std::vector<double>> m2);

private:
    std::vector<Tensor> params_;
    Hyper hyper_;
    std::vector<std::vector<double>> m1_, m2_;
    std::size_t step_ = 0;
};

// Linear warmup from zero to peak over `warmup` steps, then linear decay to
// zero at `max_steps`.
double lr_schedule(std::size_t step, std::size_t warmup, std::size_t max_steps, double peak);

} // namespace graphormer
