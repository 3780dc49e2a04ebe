// SPDX-License-Identifier: Apache-2.0

#include "graphormer/geometry3d.hpp"

#include <cmath>

namespace graphormer {

namespace {

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 axpy(const Vec3& p, const Vec3& v, double s) {
    return {p[0] + s * v[0], p[1] + s * v[1], p[2] + s * v[2]};
}

double distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

} // namespace

double Cell::determinant() const {
    return dot(rows[0], cross(rows[1], rows[2]));
}

void Structure3D::validate() const {
    const std::size_t n = atoms.size();
    if (positions.size() != n) {
        throw ContractError("structure3d: positions rows do not match atom count");
    }
    if (!fixed.empty() && fixed.size() != n) {
        throw ContractError("structure3d: fixed tags do not match atom count");
    }
    if (relaxed_positions && relaxed_positions->size() != n) {
        throw ContractError("structure3d: relaxed_positions rows do not match atom count");
    }
    for (const auto& p : positions) {
        for (double c : p) {
            if (!std::isfinite(c)) throw NumericError("structure3d: non-finite position");
        }
    }
}

double GbfBank::width() const {
    return cutoff / static_cast<double>(num_basis > 1 ? num_basis - 1 : 1);
}

double GbfBank::mean(std::size_t k) const {
    return static_cast<double>(k) * width();
}

ExpandedStructure expand_identity(const Structure3D& s) {
    s.validate();
    ExpandedStructure e;
    e.atoms = s.atoms;
    e.positions = s.positions;
    e.fixed = s.fixed.empty() ? std::vector<bool>(s.size(), false) : s.fixed;
    e.origin_index.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) e.origin_index[i] = i;
    e.is_image.assign(s.size(), false);
    e.n_original = s.size();
    return e;
}

ExpandedStructure pbc_expand(const Structure3D& s, double cutoff) {
    s.validate();
    if (!s.cell) throw ContractError("pbc_expand: structure has no cell");
    if (cutoff <= 0.0) throw ContractError("pbc_expand: cutoff must be positive");
    const Cell& cell = *s.cell;

    const double det = cell.determinant();
    if (std::fabs(det) < 1e-12) {
        throw GeometryError("pbc_expand: singular cell matrix");
    }

    // Perpendicular height along axis k = |det| / |a_i x a_j|.
    std::array<long, 3> range{0, 0, 0};
    for (std::size_t k = 0; k < 3; ++k) {
        if (!cell.periodic[k]) continue;
        const Vec3 face = cross(cell.rows[(k + 1) % 3], cell.rows[(k + 2) % 3]);
        const double height = std::fabs(det) / norm(face);
        range[k] = static_cast<long>(std::ceil(cutoff / height));
    }

    ExpandedStructure e = expand_identity(s);
    const std::size_t n = s.size();
    const std::vector<bool> base_fixed = e.fixed;
    for (long sa = -range[0]; sa <= range[0]; ++sa) {
        for (long sb = -range[1]; sb <= range[1]; ++sb) {
            for (long sc = -range[2]; sc <= range[2]; ++sc) {
                if (sa == 0 && sb == 0 && sc == 0) continue;
                Vec3 shift{0, 0, 0};
                shift = axpy(shift, cell.rows[0], static_cast<double>(sa));
                shift = axpy(shift, cell.rows[1], static_cast<double>(sb));
                shift = axpy(shift, cell.rows[2], static_cast<double>(sc));
                for (std::size_t j = 0; j < n; ++j) {
                    const Vec3 img = {s.positions[j][0] + shift[0], s.positions[j][1] + shift[1],
                                      s.positions[j][2] + shift[2]};
                    bool within = false;
                    for (std::size_t i = 0; i < n && !within; ++i) {
                        within = distance(img, s.positions[i]) <= cutoff;
                    }
                    if (!within) continue;
                    e.atoms.push_back(s.atoms[j]);
                    e.positions.push_back(img);
                    e.fixed.push_back(base_fixed[j]);
                    e.origin_index.push_back(j);
                    e.is_image.push_back(true);
                }
            }
        }
    }
    return e;
}

Tensor pairwise_distances(const std::vector<Vec3>& positions) {
    const std::size_t n = positions.size();
    std::vector<double> vals(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = distance(positions[i], positions[j]);
            vals[i * n + j] = d;
            vals[j * n + i] = d;
        }
    }
    return Tensor::from({n, n}, std::move(vals));
}

Tensor gbf_features(const Tensor& distances, const GbfBank& bank) {
    if (distances.ndim() != 2) {
        throw ShapeError("gbf_features: distances must be a matrix, got " +
                         shape_str(distances.shape()));
    }
    const std::size_t n = distances.shape()[0];
    const std::size_t m = distances.shape()[1];
    const std::size_t K = bank.num_basis;
    const double sigma = bank.width();
    const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);

    const auto& dv = distances.values();
    std::vector<double> vals(n * m * K, 0.0);
    for (std::size_t i = 0; i < n * m; ++i) {
        const double d = dv[i];
        if (d > bank.cutoff) continue; // hard cutoff
        double* dst = vals.data() + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double c = d - bank.mean(k);
            dst[k] = std::exp(-c * c * inv_two_sigma_sq);
        }
    }
    return Tensor::from({n, m, K}, std::move(vals));
}

Tensor bias_3d(const Tensor& feats, const Tensor& w1, const Tensor& b1, const Tensor& w2) {
    if (feats.ndim() != 3) {
        throw ShapeError("bias_3d: feats must be [n,m,K], got " + shape_str(feats.shape()));
    }
    const std::size_t n = feats.shape()[0];
    const std::size_t m = feats.shape()[1];
    const std::size_t K = feats.shape()[2];
    const std::size_t heads = w2.shape()[1];

    Tensor flat = reshape(feats, {n * m, K});
    Tensor hidden = gelu(add(matmul(flat, w1), b1));
    Tensor projected = matmul(hidden, w2);                   // [n*m, H]
    return transpose(reshape(projected, {n, m, heads}), {2, 0, 1});
}

Tensor centrality_3d(const Tensor& feats, const Tensor& proj) {
    if (feats.ndim() != 3 || feats.shape()[0] != feats.shape()[1]) {
        throw ShapeError("centrality_3d: feats must be [n,n,K], got " + shape_str(feats.shape()));
    }
    const std::size_t n = feats.shape()[0];
    std::vector<double> mask(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0.0;
    Tensor off_diag = mul(feats, Tensor::from({n, n, 1}, std::move(mask)));
    Tensor sums = reduce_sum(off_diag, 1); // [n, K]
    return matmul(sums, proj);
}

Tensor relative_offsets(const std::vector<Vec3>& positions) {
    const std::size_t n = positions.size();
    std::vector<double> vals(n * n * 3, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double d = distance(positions[i], positions[j]);
            if (d < 1e-10) {
                throw GeometryError("relative_offsets: atoms " + std::to_string(i) + " and " +
                                    std::to_string(j) + " coincide");
            }
            double* dst = vals.data() + (i * n + j) * 3;
            for (std::size_t c = 0; c < 3; ++c) {
                dst[c] = (positions[i][c] - positions[j][c]) / d;
            }
        }
    }
    return Tensor::from({n, n, 3}, std::move(vals));
}

} // namespace graphormer
