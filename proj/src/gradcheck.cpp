// SPDX-License-Identifier: Apache-2.0

#include "graphormer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace graphormer {

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double step) {
    if (step <= 0.0) throw ContractError("grad_check: step must be positive");

    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        for (auto& p : params) p.zero_grad();
        Tensor loss = f();
        tape.backward(loss);
        for (auto& p : params) {
            analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));
        }
    }

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + step;
            const double up = f().item();
            vals[i] = keep - step;
            const double down = f().item();
            vals[i] = keep;
            const double cd = (up - down) / (2.0 * step);
            const double an = analytic[pi][i];
            const double denom = std::max({std::fabs(an), std::fabs(cd), 1e-8});
            max_rel = std::max(max_rel, std::fabs(an - cd) / denom);
        }
    }
    return max_rel;
}

} // namespace graphormer
