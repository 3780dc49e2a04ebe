// SPDX-License-Identifier: Apache-2.0
//
// Line-delimited dataset records, synthetic data generators, and the
// Lennard-Jones oracle behind the 3D targets (reduced units, epsilon =
// sigma = 1). 2D toy targets are average degree plus half the per-node
// triangle count.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "graphormer/geometry3d.hpp"
#include "graphormer/graph2d.hpp"
#include "graphormer/model.hpp"

namespace graphormer {

struct DatasetRecord {
    // Exactly one payload is present.
    std::optional<Graph2D> graph;
    std::optional<double> graph_target;
    std::optional<Structure3D> structure;

    bool is_2d() const { return graph.has_value(); }
    void validate() const;
};

using Dataset = std::vector<DatasetRecord>;

Dataset load_dataset(const std::string& path, GraphMode mode);
void save_dataset(const std::string& path, const Dataset& data);

std::string record_to_json_line(const DatasetRecord& rec);
DatasetRecord record_from_json_line(const std::string& line, GraphMode mode,
                                    std::size_t line_number);

// ---- synthetic data ----------------------------------------------------

enum class SynthKind { kLjClusters, kPeriodicToy, kGraph2DToy };

SynthKind synth_kind_from_string(const std::string& name);

Dataset synth_generate(SynthKind kind, std::size_t count, std::uint64_t seed);

// Pairwise 12-6 Lennard-Jones sum over all pairs.
double lj_energy(const std::vector<Vec3>& positions);
std::vector<Vec3> lj_forces(const std::vector<Vec3>& positions);

// Minimum-image variant for periodic cells; pairs beyond `cutoff` skipped.
double lj_energy_periodic(const std::vector<Vec3>& positions, const Cell& cell, double cutoff);
std::vector<Vec3> lj_forces_periodic(const std::vector<Vec3>& positions, const Cell& cell,
                                     double cutoff);

// Documented closed-form 2D target: 2|E|/n + triangles/(2n).
double graph2d_toy_target(const Graph2D& g);

} // namespace graphormer
