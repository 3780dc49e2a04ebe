// SPDX-License-Identifier: Apache-2.0

#include "graphormer/heads.hpp"

#include <cmath>

namespace graphormer {

Tensor mlp_head(const Tensor& x, const MlpHeadParams& params) {
    Tensor hidden = gelu(add(matmul(x, params.w1), params.b1));
    return add(matmul(hidden, params.w2), params.b2);
}

Tensor energy_readout(const Tensor& node_reprs, const std::vector<bool>& is_original,
                      const MlpHeadParams& params) {
    if (node_reprs.ndim() != 2 || node_reprs.shape()[0] != is_original.size()) {
        throw ShapeError("energy_readout: mask length " + std::to_string(is_original.size()) +
                         " does not match representations " + shape_str(node_reprs.shape()));
    }
    std::size_t count = 0;
    for (bool b : is_original) count += b ? 1 : 0;
    if (count == 0) throw ContractError("energy_readout: mask selects no original atoms");

    const std::size_t n = is_original.size();
    std::vector<double> weights(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (is_original[i]) weights[i] = 1.0 / static_cast<double>(count);
    }
    Tensor pooled = matmul(Tensor::from({1, n}, std::move(weights)), node_reprs); // [1, d]
    return reshape(mlp_head(pooled, params), {});
}

Tensor equivariant_vector_head(const Tensor& queries, const Tensor& keys_values,
                               const Tensor& unit_offsets, const Tensor& pair_bias,
                               const EquivariantHeadParams& params) {
    const std::size_t n = queries.shape()[0];
    const std::size_t m = keys_values.shape()[0];
    const std::size_t d = queries.shape()[1];
    if (unit_offsets.shape() != Shape{n, m, 3}) {
        throw ShapeError("equivariant_vector_head: unit offsets must be [" + std::to_string(n) +
                         "," + std::to_string(m) + ",3], got " + shape_str(unit_offsets.shape()));
    }
    if (pair_bias.shape() != Shape{n, m}) {
        throw ShapeError("equivariant_vector_head: pair bias must be [" + std::to_string(n) +
                         "," + std::to_string(m) + "], got " + shape_str(pair_bias.shape()));
    }

    Tensor q = matmul(queries, params.wq);
    Tensor k = matmul(keys_values, params.wk);
    Tensor v = matmul(keys_values, params.wv);

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor scores = add(scale(matmul(q, transpose(k, {1, 0})), inv_sqrt_d), pair_bias);
    Tensor attn = softmax_lastdim(scores); // [n, m]

    std::vector<Tensor> components;
    components.reserve(3);
    for (std::size_t c = 0; c < 3; ++c) {
        // constant [n,m] slice of the offsets along axis c
        std::vector<double> uc(n * m);
        const auto& uv = unit_offsets.values();
        for (std::size_t i = 0; i < n * m; ++i) uc[i] = uv[i * 3 + c];
        Tensor weighted = mul(attn, Tensor::from({n, m}, std::move(uc)));
        Tensor value_scalar = matmul(v, params.direction(c)); // [m, 1]
        components.push_back(matmul(weighted, value_scalar)); // [n, 1]
    }
    return concat(components, 1); // [n, 3]
}

Tensor mae_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("mae_loss: prediction " + shape_str(pred.shape()) +
                         " does not match target " + shape_str(target.shape()));
    }
    return reduce_mean(abs(sub(pred, target)));
}

Tensor displacement_aux_loss(const Tensor& pred, const std::vector<Vec3>& initial,
                             const std::optional<std::vector<Vec3>>& relaxed, double weight) {
    if (weight == 0.0) return Tensor::scalar(0.0);
    if (!relaxed) {
        throw DataError("displacement_aux_loss: relaxed positions required when weight > 0");
    }
    const std::size_t n = initial.size();
    if (relaxed->size() != n || pred.shape() != Shape{n, 3}) {
        throw ShapeError("displacement_aux_loss: prediction " + shape_str(pred.shape()) +
                         " does not match " + std::to_string(n) + " atoms");
    }
    std::vector<double> target(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            target[i * 3 + c] = (*relaxed)[i][c] - initial[i][c];
        }
    }
    Tensor diff = sub(pred, Tensor::from({n, 3}, std::move(target)));
    return scale(reduce_mean(abs(diff)), weight);
}

} // namespace graphormer
