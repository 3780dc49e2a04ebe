// SPDX-License-Identifier: Apache-2.0
//
// Output heads and objectives: pooled scalar regression, the direction-
// decomposed attention head whose shared projections make it exactly
// rotation-equivariant, and the MAE / displacement losses.

#pragma once

#include <optional>
#include <vector>

#include "graphormer/geometry3d.hpp"
#include "graphormer/tensor.hpp"

namespace graphormer {

// Two-layer GELU map used by scalar readouts.
struct MlpHeadParams {
    Tensor w1, b1; // [d, hidden], [hidden]
    Tensor w2, b2; // [hidden, 1], [1]
};

Tensor mlp_head(const Tensor& x, const MlpHeadParams& params);

// Mean-pool node representations over atoms flagged original, then apply the
// two-layer map. Throws if the mask selects nothing.
Tensor energy_readout(const Tensor& node_reprs, const std::vector<bool>& is_original,
                      const MlpHeadParams& params);

struct EquivariantHeadParams {
    Tensor wq, wk, wv; // [d, d]
    // One stored vector when projections are shared; three otherwise. The
    // shared case is what makes the head exactly rotation-equivariant.
    std::vector<Tensor> direction_proj; // each [d, 1]

    bool shared() const { return direction_proj.size() == 1; }
    const Tensor& direction(std::size_t axis) const {
        return direction_proj[shared() ? 0 : axis];
    }
};

// Attention over all tokens with queries restricted to the n query rows.
// out[i,c] = dir_c^T . sum_j attn[i,j] * unit_offsets[i,j,c] * (wv^T x_j).
// unit_offsets is [n,m,3] with zero diagonal; pair_bias is [n,m] additive.
Tensor equivariant_vector_head(const Tensor& queries, const Tensor& keys_values,
                               const Tensor& unit_offsets, const Tensor& pair_bias,
                               const EquivariantHeadParams& params);

// Mean absolute error; shapes must match exactly (no broadcasting).
Tensor mae_loss(const Tensor& pred, const Tensor& target);

// Mean L1 over atoms of (pred - (relaxed - initial)), scaled by weight.
// weight == 0 short-circuits to a constant zero so records without relaxed
// positions stay usable.
Tensor displacement_aux_loss(const Tensor& pred, const std::vector<Vec3>& initial,
                             const std::optional<std::vector<Vec3>>& relaxed, double weight);

} // namespace graphormer
