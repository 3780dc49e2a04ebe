// SPDX-License-Identifier: Apache-2.0

#include "graphormer/optim.hpp"

#include <cmath>

namespace graphormer {

AdamW::AdamW(std::vector<Tensor> params, Hyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
    m1_.reserve(params_.size());
    m2_.reserve(params_.size());
    for (const auto& p : params_) {
        m1_.emplace_back(p.numel(), 0.0);
        m2_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step(double lr, double weight_decay) {
    step_ += 1;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& vals = params_[pi].mutable_values();
        const double* g = params_[pi].has_grad() ? params_[pi].grad().data() : nullptr;
        auto& m = m1_[pi];
        auto& v = m2_[pi];
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double gi = g ? g[i] : 0.0;
            m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * gi;
            v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * gi * gi;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            vals[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper_.eps);
            vals[i] -= lr * weight_decay * vals[i]; // decoupled decay
            if (!std::isfinite(vals[i])) {
                throw NumericError("adam: parameter became non-finite");
            }
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void AdamW::restore(std::size_t step, std::vector<std::vector<double>> m1,
                    std::vector<std::vector<double>> m2) {
    if (m1.size() != params_.size() || m2.size() != params_.size()) {
        throw ContractError("adam: restored state does not match parameter count");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (m1[i].size() != params_[i].numel() || m2[i].size() != params_[i].numel()) {
            throw ContractError("adam: restored state does not match parameter shapes");
        }
    }
    step_ = step;
    m1_ = std::move(m1);
    m2_ = std::move(m2);
}

double lr_schedule(std::size_t step, std::size_t warmup, std::size_t max_steps, double peak) {
    if (max_steps == 0) return 0.0;
    if (warmup > 0 && step < warmup) {
        return peak * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (step >= max_steps) return 0.0;
    return peak * static_cast<double>(max_steps - step) /
           static_cast<double>(max_steps - warmup);
}

} // namespace graphormer
