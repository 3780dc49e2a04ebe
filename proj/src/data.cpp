// SPDX-License-Identifier: Apache-2.0

#include "graphormer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace graphormer {

using nlohmann::json;

void DatasetRecord::validate() const {
    const bool has_2d = graph.has_value();
    const bool has_3d = structure.has_value();
    if (has_2d == has_3d) {
        throw ContractError("dataset record: exactly one of graph / structure must be present");
    }
    if (has_2d) {
        if (!graph_target || !std::isfinite(*graph_target)) {
            throw DataError("dataset record: 2D record needs a finite target");
        }
        graph->validate();
    } else {
        structure->validate();
        if (structure->energy && !std::isfinite(*structure->energy)) {
            throw DataError("dataset record: non-finite energy");
        }
    }
}

namespace {

std::string field_error(std::size_t line, const std::string& field, const std::string& msg) {
    return "line " + std::to_string(line) + ": field '" + field + "': " + msg;
}

const json& require_field(const json& obj, const char* key, std::size_t line) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(field_error(line, key, "missing"));
    return *it;
}

std::vector<Vec3> parse_positions(const json& arr, const char* key, std::size_t line) {
    if (!arr.is_array()) throw ParseError(field_error(line, key, "expected an array"));
    std::vector<Vec3> out;
    out.reserve(arr.size());
    for (const auto& row : arr) {
        if (!row.is_array() || row.size() != 3) {
            throw ParseError(field_error(line, key, "expected 3 floats per atom"));
        }
        Vec3 p{};
        for (std::size_t c = 0; c < 3; ++c) {
            if (!row[c].is_number()) {
                throw ParseError(field_error(line, key, "expected 3 floats per atom"));
            }
            p[c] = row[c].get<double>();
        }
        out.push_back(p);
    }
    return out;
}

json positions_to_json(const std::vector<Vec3>& pos) {
    json arr = json::array();
    for (const auto& p : pos) arr.push_back({p[0], p[1], p[2]});
    return arr;
}

Structure3D parse_structure(const json& obj, std::size_t line) {
    Structure3D s;
    for (const auto& a : require_field(obj, "atoms", line)) {
        if (!a.is_number_integer()) {
            throw ParseError(field_error(line, "atoms", "expected integer atomic numbers"));
        }
        s.atoms.push_back(a.get<std::int64_t>());
    }
    s.positions = parse_positions(require_field(obj, "pos", line), "pos", line);
    if (s.positions.size() != s.atoms.size()) {
        throw ParseError(field_error(line, "pos", "row count does not match atoms"));
    }
    if (obj.contains("cell")) {
        const auto& c = obj["cell"];
        if (!c.is_array() || c.size() != 9) {
            throw ParseError(field_error(line, "cell", "expected 9 floats row-major"));
        }
        Cell cell;
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                cell.rows[i][j] = c[i * 3 + j].get<double>();
            }
        }
        if (obj.contains("pbc")) {
            const auto& p = obj["pbc"];
            if (!p.is_array() || p.size() != 3) {
                throw ParseError(field_error(line, "pbc", "expected 3 booleans"));
            }
            for (std::size_t i = 0; i < 3; ++i) cell.periodic[i] = p[i].get<bool>();
        }
        s.cell = cell;
    }
    if (obj.contains("energy")) {
        if (!obj["energy"].is_number()) {
            throw ParseError(field_error(line, "energy", "expected a float"));
        }
        s.energy = obj["energy"].get<double>();
    }
    if (obj.contains("relaxed_pos")) {
        s.relaxed_positions = parse_positions(obj["relaxed_pos"], "relaxed_pos", line);
        if (s.relaxed_positions->size() != s.atoms.size()) {
            throw ParseError(field_error(line, "relaxed_pos", "row count does not match atoms"));
        }
    }
    if (obj.contains("fixed")) {
        const auto& f = obj["fixed"];
        if (!f.is_array() || f.size() != s.atoms.size()) {
            throw ParseError(field_error(line, "fixed", "expected one boolean per atom"));
        }
        s.fixed.resize(f.size());
        for (std::size_t i = 0; i < f.size(); ++i) s.fixed[i] = f[i].get<bool>();
    }
    return s;
}

Graph2D parse_graph(const json& obj, std::size_t line) {
    Graph2D g;
    const auto& nf = require_field(obj, "node_feats", line);
    if (!nf.is_array()) throw ParseError(field_error(line, "node_feats", "expected an array"));
    for (const auto& row : nf) {
        if (!row.is_array()) {
            throw ParseError(field_error(line, "node_feats", "expected integer rows"));
        }
        std::vector<std::int64_t> feats;
        for (const auto& v : row) feats.push_back(v.get<std::int64_t>());
        g.node_feats.push_back(std::move(feats));
    }
    g.n = g.node_feats.size();
    const auto& edges = require_field(obj, "edges", line);
    if (!edges.is_array()) throw ParseError(field_error(line, "edges", "expected an array"));
    for (const auto& e : edges) {
        if (!e.is_array() || e.size() < 2) {
            throw ParseError(field_error(line, "edges", "expected [u, v, feature ids...]"));
        }
        Graph2D::Edge edge;
        edge.u = e[0].get<std::size_t>();
        edge.v = e[1].get<std::size_t>();
        for (std::size_t i = 2; i < e.size(); ++i) edge.feats.push_back(e[i].get<std::int64_t>());
        g.edges.push_back(std::move(edge));
    }
    return g;
}

} // namespace

DatasetRecord record_from_json_line(const std::string& line, GraphMode mode,
                                    std::size_t line_number) {
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError("line " + std::to_string(line_number) + ": invalid JSON: " + e.what());
    }
    if (!obj.is_object()) {
        throw ParseError("line " + std::to_string(line_number) + ": expected a JSON object");
    }
    DatasetRecord rec;
    if (mode == GraphMode::kGraph2D) {
        rec.graph = parse_graph(obj, line_number);
        const auto& t = require_field(obj, "target", line_number);
        if (!t.is_number()) {
            throw ParseError(field_error(line_number, "target", "expected a float"));
        }
        rec.graph_target = t.get<double>();
    } else {
        rec.structure = parse_structure(obj, line_number);
    }
    rec.validate();
    return rec;
}

std::string record_to_json_line(const DatasetRecord& rec) {
    rec.validate();
    json obj;
    if (rec.is_2d()) {
        json nf = json::array();
        for (const auto& row : rec.graph->node_feats) nf.push_back(row);
        obj["node_feats"] = nf;
        json edges = json::array();
        for (const auto& e : rec.graph->edges) {
            json item = json::array({e.u, e.v});
            for (auto f : e.feats) item.push_back(f);
            edges.push_back(item);
        }
        obj["edges"] = edges;
        obj["target"] = *rec.graph_target;
    } else {
        const Structure3D& s = *rec.structure;
        obj["atoms"] = s.atoms;
        obj["pos"] = positions_to_json(s.positions);
        if (s.cell) {
            json c = json::array();
            for (const auto& row : s.cell->rows) {
                for (double v : row) c.push_back(v);
            }
            obj["cell"] = c;
            obj["pbc"] = {s.cell->periodic[0], s.cell->periodic[1], s.cell->periodic[2]};
        }
        if (s.energy) obj["energy"] = *s.energy;
        if (s.relaxed_positions) obj["relaxed_pos"] = positions_to_json(*s.relaxed_positions);
        if (!s.fixed.empty()) {
            json f = json::array();
            for (bool b : s.fixed) f.push_back(b);
            obj["fixed"] = f;
        }
    }
    return obj.dump();
}

Dataset load_dataset(const std::string& path, GraphMode mode) {
    std::ifstream in(path);
    if (!in) throw DataError("load_dataset: cannot open " + path);
    Dataset out;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        out.push_back(record_from_json_line(line, mode, line_number));
    }
    return out;
}

void save_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw DataError("save_dataset: cannot open " + path);
    for (const auto& rec : data) out << record_to_json_line(rec) << '\n';
}

// ---- Lennard-Jones oracle ---------------------------------------------

namespace {

inline double lj_pair_energy(double r) {
    const double inv6 = 1.0 / (r * r * r * r * r * r);
    return 4.0 * (inv6 * inv6 - inv6);
}

// dE/dr of the 12-6 potential.
inline double lj_pair_dedr(double r) {
    const double inv = 1.0 / r;
    const double inv6 = inv * inv * inv * inv * inv * inv;
    return 4.0 * (-12.0 * inv6 * inv6 + 6.0 * inv6) * inv;
}

Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

double norm3(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

// Offset of the nearest periodic image of (a - b), searching adjacent cells.
Vec3 min_image(const Vec3& a, const Vec3& b, const Cell& cell) {
    Vec3 best = sub3(a, b);
    double best_norm = norm3(best);
    for (int sa = -1; sa <= 1; ++sa) {
        for (int sb = -1; sb <= 1; ++sb) {
            for (int sc = -1; sc <= 1; ++sc) {
                Vec3 d = sub3(a, b);
                for (std::size_t c = 0; c < 3; ++c) {
                    d[c] += sa * cell.rows[0][c] + sb * cell.rows[1][c] + sc * cell.rows[2][c];
                }
                const double nd = norm3(d);
                if (nd < best_norm) {
                    best_norm = nd;
                    best = d;
                }
            }
        }
    }
    return best;
}

} // namespace

double lj_energy(const std::vector<Vec3>& positions) {
    double e = 0.0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (std::size_t j = i + 1; j < positions.size(); ++j) {
            e += lj_pair_energy(norm3(sub3(positions[i], positions[j])));
        }
    }
    return e;
}

std::vector<Vec3> lj_forces(const std::vector<Vec3>& positions) {
    std::vector<Vec3> f(positions.size(), Vec3{0, 0, 0});
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (std::size_t j = i + 1; j < positions.size(); ++j) {
            const Vec3 d = sub3(positions[i], positions[j]);
            const double r = norm3(d);
            const double dedr = lj_pair_dedr(r);
            for (std::size_t c = 0; c < 3; ++c) {
                const double g = dedr * d[c] / r; // dE/dr_i
                f[i][c] -= g;
                f[j][c] += g;
            }
        }
    }
    return f;
}

double lj_energy_periodic(const std::vector<Vec3>& positions, const Cell& cell, double cutoff) {
    double e = 0.0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (std::size_t j = i + 1; j < positions.size(); ++j) {
            const double r = norm3(min_image(positions[i], positions[j], cell));
            if (r <= cutoff) e += lj_pair_energy(r);
        }
    }
    return e;
}

std::vector<Vec3> lj_forces_periodic(const std::vector<Vec3>& positions, const Cell& cell,
                                     double cutoff) {
    std::vector<Vec3> f(positions.size(), Vec3{0, 0, 0});
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (std::size_t j = i + 1; j < positions.size(); ++j) {
            const Vec3 d = min_image(positions[i], positions[j], cell);
            const double r = norm3(d);
            if (r > cutoff) continue;
            const double dedr = lj_pair_dedr(r);
            for (std::size_t c = 0; c < 3; ++c) {
                const double g = dedr * d[c] / r;
                f[i][c] -= g;
                f[j][c] += g;
            }
        }
    }
    return f;
}

double graph2d_toy_target(const Graph2D& g) {
    if (g.n == 0) return 0.0;
    std::vector<char> adj(g.n * g.n, 0);
    for (const auto& e : g.edges) {
        adj[e.u * g.n + e.v] = 1;
        adj[e.v * g.n + e.u] = 1;
    }
    std::size_t triangles = 0;
    for (std::size_t i = 0; i < g.n; ++i) {
        for (std::size_t j = i + 1; j < g.n; ++j) {
            if (!adj[i * g.n + j]) continue;
            for (std::size_t k = j + 1; k < g.n; ++k) {
                if (adj[i * g.n + k] && adj[j * g.n + k]) ++triangles;
            }
        }
    }
    const double n = static_cast<double>(g.n);
    return 2.0 * static_cast<double>(g.edges.size()) / n +
           static_cast<double>(triangles) / (2.0 * n);
}

// ---- synthetic generation ----------------------------------------------

namespace {

constexpr double kLjSpacing = 1.1224620483093730; // 2^(1/6), pair minimum

std::vector<Vec3> lj13_base_positions() {
    // 13 sites of a 3x3x3 grid closest to its center, fixed order.
    std::vector<Vec3> grid;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 3; ++k) grid.push_back({double(i), double(j), double(k)});
        }
    }
    std::stable_sort(grid.begin(), grid.end(), [](const Vec3& a, const Vec3& b) {
        auto d = [](const Vec3& p) {
            const double dx = p[0] - 1.0, dy = p[1] - 1.0, dz = p[2] - 1.0;
            return dx * dx + dy * dy + dz * dz;
        };
        return d(a) < d(b);
    });
    grid.resize(13);
    for (auto& p : grid) {
        for (auto& c : p) c *= kLjSpacing;
    }
    return grid;
}

double min_pair_distance(const std::vector<Vec3>& pos) {
    double best = 1e30;
    for (std::size_t i = 0; i < pos.size(); ++i) {
        for (std::size_t j = i + 1; j < pos.size(); ++j) {
            best = std::min(best, norm3(sub3(pos[i], pos[j])));
        }
    }
    return best;
}

// Plain gradient descent on the oracle with per-atom force clipping; fixed
// atoms stay put. Deterministic for a given start.
std::vector<Vec3> relax_positions(std::vector<Vec3> pos, const std::vector<bool>& fixed,
                                  const std::optional<Cell>& cell, double cutoff,
                                  std::size_t steps, double step_size) {
    for (std::size_t t = 0; t < steps; ++t) {
        const auto forces = cell ? lj_forces_periodic(pos, *cell, cutoff) : lj_forces(pos);
        for (std::size_t i = 0; i < pos.size(); ++i) {
            if (!fixed.empty() && fixed[i]) continue;
            Vec3 f = forces[i];
            const double fn = norm3(f);
            if (fn > 10.0) {
                for (auto& c : f) c *= 10.0 / fn;
            }
            for (std::size_t c = 0; c < 3; ++c) pos[i][c] += step_size * f[c];
        }
    }
    return pos;
}

DatasetRecord make_lj_cluster(Rng& rng, const std::vector<Vec3>& base) {
    Structure3D s;
    const std::size_t n = base.size();
    for (std::size_t i = 0; i < n; ++i) {
        static const std::int64_t palette[3] = {1, 6, 8};
        s.atoms.push_back(palette[i % 3]);
    }
    for (;;) {
        s.positions = base;
        for (auto& p : s.positions) {
            for (auto& c : p) c += rng.uniform(-0.08, 0.08);
        }
        if (min_pair_distance(s.positions) >= 0.95) break;
    }
    s.fixed.assign(n, false);
    s.energy = lj_energy(s.positions);
    s.relaxed_positions = relax_positions(s.positions, s.fixed, std::nullopt, 0.0, 80, 0.005);

    DatasetRecord rec;
    rec.structure = std::move(s);
    return rec;
}

DatasetRecord make_periodic_toy(Rng& rng) {
    Cell cell;
    cell.rows = {Vec3{4.2, 0.0, 0.0}, Vec3{rng.uniform(-0.4, 0.4), 4.2, 0.0},
                 Vec3{rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 4.2}};
    cell.periodic = {true, true, true};

    Structure3D s;
    const std::size_t n = 4;
    static const std::int64_t palette[4] = {1, 6, 8, 14};
    for (std::size_t i = 0; i < n; ++i) s.atoms.push_back(palette[i]);
    const double lj_cutoff = 2.5;
    for (;;) {
        s.positions.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const double fa = rng.uniform(0.05, 0.95);
            const double fb = rng.uniform(0.05, 0.95);
            const double fc = rng.uniform(0.05, 0.95);
            Vec3 p{0, 0, 0};
            for (std::size_t c = 0; c < 3; ++c) {
                p[c] = fa * cell.rows[0][c] + fb * cell.rows[1][c] + fc * cell.rows[2][c];
            }
            s.positions.push_back(p);
        }
        double best = 1e30;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                best = std::min(best, norm3(min_image(s.positions[i], s.positions[j], cell)));
            }
        }
        if (best >= 0.95) break;
    }
    s.cell = cell;
    s.fixed.assign(n, false);
    s.fixed[0] = true;
    s.energy = lj_energy_periodic(s.positions, cell, lj_cutoff);
    s.relaxed_positions = relax_positions(s.positions, s.fixed, s.cell, lj_cutoff, 60, 0.005);

    DatasetRecord rec;
    rec.structure = std::move(s);
    return rec;
}

DatasetRecord make_graph2d_toy(Rng& rng) {
    Graph2D g;
    g.n = static_cast<std::size_t>(rng.uniform_int(6, 10));
    for (std::size_t i = 0; i < g.n; ++i) {
        g.node_feats.push_back({rng.uniform_int(0, 7), rng.uniform_int(0, 7)});
    }
    for (std::size_t i = 0; i < g.n; ++i) {
        for (std::size_t j = i + 1; j < g.n; ++j) {
            if (rng.uniform(0.0, 1.0) < 0.45) {
                g.edges.push_back({i, j, {rng.uniform_int(0, 7), rng.uniform_int(0, 7)}});
            }
        }
    }
    DatasetRecord rec;
    rec.graph_target = graph2d_toy_target(g);
    rec.graph = std::move(g);
    return rec;
}

} // namespace

SynthKind synth_kind_from_string(const std::string& name) {
    if (name == "lj" || name == "lj13") return SynthKind::kLjClusters;
    if (name == "periodic") return SynthKind::kPeriodicToy;
    if (name == "graph2d") return SynthKind::kGraph2DToy;
    throw ContractError("unknown synth kind '" + name + "' (expected lj, periodic, graph2d)");
}

Dataset synth_generate(SynthKind kind, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    Dataset out;
    out.reserve(count);
    const auto base = lj13_base_positions();
    for (std::size_t i = 0; i < count; ++i) {
        switch (kind) {
            case SynthKind::kLjClusters: out.push_back(make_lj_cluster(rng, base)); break;
            case SynthKind::kPeriodicToy: out.push_back(make_periodic_toy(rng)); break;
            case SynthKind::kGraph2DToy: out.push_back(make_graph2d_toy(rng)); break;
        }
    }
    return out;
}

} // namespace graphormer
