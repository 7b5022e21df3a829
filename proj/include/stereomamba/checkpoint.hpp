// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: a little-endian uint64 manifest length, a JSON
// manifest (entry names, shapes, element offsets, step counter, config
// fingerprint), then one raw little-endian float64 payload holding every
// tensor back to back. Moments ride along as "opt.m.<param>" / "opt.v.<param>"
// entries so a resumed run continues bitwise.

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stereomamba/tensor.hpp"

namespace stereomamba {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts need a swap pass");

struct CheckpointData {
    int64_t step = 0;
    uint64_t config_fingerprint = 0;
    std::vector<std::pair<std::string, Tensor>> entries;  // saved and restored in order
};

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
    nlohmann::json manifest;
    manifest["format"] = "stereomamba-checkpoint-v1";
    manifest["step"] = data.step;
    manifest["config_fingerprint"] = data.config_fingerprint;
    nlohmann::json entries = nlohmann::json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : data.entries) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = offset;
        entries.push_back(std::move(e));
        offset += t.size();
    }
    manifest["entries"] = std::move(entries);
    const std::string mtext = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path.string());
    const uint64_t mlen = mtext.size();
    f.write(reinterpret_cast<const char*>(&mlen), sizeof mlen);
    f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& [name, t] : data.entries)
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path.string());
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), sizeof mlen);
    if (!f || mlen == 0 || mlen > (1u << 26))
        throw std::runtime_error("checkpoint: bad manifest length in " + path.string());
    std::string mtext(mlen, '\0');
    f.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw std::runtime_error("checkpoint: truncated manifest in " + path.string());

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: bad manifest in " + path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "stereomamba-checkpoint-v1")
        throw std::runtime_error("checkpoint: unknown format in " + path.string());

    CheckpointData data;
    data.step = manifest.at("step").get<int64_t>();
    data.config_fingerprint = manifest.at("config_fingerprint").get<uint64_t>();
    int64_t expect_offset = 0;
    for (const auto& e : manifest.at("entries")) {
        const std::string name = e.at("name").get<std::string>();
        const Shape shape = e.at("shape").get<Shape>();
        if (e.at("offset").get<int64_t>() != expect_offset)
            throw std::runtime_error("checkpoint: non-contiguous payload in " + path.string());
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!f) throw std::runtime_error("checkpoint: truncated payload in " + path.string());
        expect_offset += t.size();
        data.entries.emplace_back(name, std::move(t));
    }
    return data;
}

}  // namespace stereomamba
