// SPDX-License-Identifier: Apache-2.0

#include "graphormer/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace graphormer {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'G', 'R', 'F', 'C', 'K', 'P', 'T', '1'};

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::ifstream& in, std::size_t count, const std::string& what) {
    std::vector<double> v(count);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw DataError("checkpoint: truncated while reading " + what);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json header;
    header["version"] = Checkpoint::kVersion;
    header["run_config"] = ckpt.run_config;
    header["target_mean"] = ckpt.target_mean;
    header["target_std"] = ckpt.target_std;
    header["has_optimizer"] = ckpt.has_optimizer;
    header["adam_step"] = ckpt.adam_step;
    json tensors = json::array();
    for (const auto& [name, t] : ckpt.params) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}});
    }
    header["params"] = tensors;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = Checkpoint::kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : ckpt.params) write_doubles(out, t.values());
    if (ckpt.has_optimizer) {
        for (const auto& m : ckpt.adam_m1) write_doubles(out, m);
        for (const auto& m : ckpt.adam_m2) write_doubles(out, m);
    }
    if (!out) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("checkpoint: bad magic in " + path);
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != Checkpoint::kVersion) {
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    }
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw DataError("checkpoint: truncated header in " + path);

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("checkpoint: corrupt header: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.run_config = header.at("run_config");
    ckpt.target_mean = header.at("target_mean").get<double>();
    ckpt.target_std = header.at("target_std").get<double>();
    ckpt.has_optimizer = header.at("has_optimizer").get<bool>();
    ckpt.adam_step = header.at("adam_step").get<std::size_t>();

    for (const auto& entry : header.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        const Shape shape = entry.at("shape").get<Shape>();
        auto values = read_doubles(in, numel_of(shape), "tensor " + name);
        ckpt.params.emplace_back(name, Tensor::from(shape, std::move(values), true));
    }
    if (ckpt.has_optimizer) {
        for (const auto& [name, t] : ckpt.params) {
            ckpt.adam_m1.push_back(read_doubles(in, t.numel(), "moment1 of " + name));
        }
        for (const auto& [name, t] : ckpt.params) {
            ckpt.adam_m2.push_back(read_doubles(in, t.numel(), "moment2 of " + name));
        }
    }
    return ckpt;
}

} // namespace graphormer
