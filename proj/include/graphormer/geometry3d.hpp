// SPDX-License-Identifier: Apache-2.0
//
// 3D preprocessing: pairwise distances, Gaussian-basis distance features,
// summed spatial centrality, unit relative offsets, and periodic-cell atom
// duplication within a cutoff. Everything here is a pure function of the
// geometry; learnable projections live with the model parameters.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "graphormer/tensor.hpp"

namespace graphormer {

using Vec3 = std::array<double, 3>;

struct Cell {
    // Rows are lattice vectors, in the same length unit as positions.
    std::array<Vec3, 3> rows{};
    std::array<bool, 3> periodic{true, true, true};

    double determinant() const;
};

struct Structure3D {
    std::vector<std::int64_t> atoms; // atomic numbers
    std::vector<Vec3> positions;
    std::vector<bool> fixed;         // per-atom fixed tag; empty = all free
    std::optional<Cell> cell;
    std::optional<double> energy;
    std::optional<std::vector<Vec3>> relaxed_positions;

    std::size_t size() const { return atoms.size(); }
    void validate() const;
};

struct GbfBank {
    std::size_t num_basis = 128;
    double cutoff = 5.0;

    // Means uniformly spaced on [0, cutoff]; widths equal to the spacing.
    double mean(std::size_t k) const;
    double width() const;
};

struct ExpandedStructure {
    std::vector<std::int64_t> atoms;
    std::vector<Vec3> positions;
    std::vector<bool> fixed;
    std::vector<std::size_t> origin_index; // source atom in the original cell
    std::vector<bool> is_image;
    std::size_t n_original = 0;

    std::size_t size() const { return atoms.size(); }
};

// Non-periodic passthrough: every atom is its own origin, no images.
ExpandedStructure expand_identity(const Structure3D& s);

// Appends one copy of each atom for every integer cell shift whose shifted
// position lands within `cutoff` of some original atom. The search range per
// axis is ceil(cutoff / perpendicular cell height); the zero shift is skipped.
ExpandedStructure pbc_expand(const Structure3D& s, double cutoff);

// D[i,j] = |r_i - r_j|; symmetric with zero diagonal.
Tensor pairwise_distances(const std::vector<Vec3>& positions);

// feats[i,j,k] = exp(-(d_ij - mu_k)^2 / (2 sigma^2)); all-zero beyond cutoff.
Tensor gbf_features(const Tensor& distances, const GbfBank& bank);

// Maps per-pair features to per-head additive bias through a two-layer GELU
// MLP [K -> hidden -> H]. feats is [n,m,K]; returns [H,n,m]. The output layer
// carries no bias: a per-head constant on attention scores is invisible to
// softmax, which would leave it as a dead parameter.
Tensor bias_3d(const Tensor& feats, const Tensor& w1, const Tensor& b1, const Tensor& w2);

// c_i = proj(sum over j != i of feats[i,j,:]); proj is a [K,d] matrix.
Tensor centrality_3d(const Tensor& feats, const Tensor& proj);

// u[i,j] = (r_i - r_j)/|r_i - r_j| for i != j, zero diagonal. Throws on
// coincident distinct atoms (distance < 1e-10). Returned as a constant
// tensor of shape [n,n,3].
Tensor relative_offsets(const std::vector<Vec3>& positions);

} // namespace graphormer
