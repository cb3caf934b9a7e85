#pragma once

// Single-file checkpoints: a magic string, a JSON manifest mapping tensor
// names to {shape, dtype, offset}, then one little-endian float32 blob.
// Tensor order is the sorted name order, offsets are contiguous, and the
// writer is deterministic, so save/load/save is byte-identical.

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wavefm/common.hpp"
#include "wavefm/optim.hpp"
#include "wavefm/params.hpp"
#include "wavefm/tensorfile.hpp"

namespace wavefm {

inline constexpr char kCkptMagic[9] = "WVFMCKP1";

struct CheckpointMeta {
    uint64_t step = 0;
    uint64_t adam_steps = 0;
    std::string config_hash;
    std::array<uint64_t, 4> rng_state{};
};

struct CheckpointData {
    std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
    CheckpointMeta meta;
};

inline void write_checkpoint(const std::string& path, const CheckpointData& ck) {
    nlohmann::json man;
    man["meta"] = {{"step", ck.meta.step},
                   {"adam_steps", ck.meta.adam_steps},
                   {"config_hash", ck.meta.config_hash},
                   {"rng_state", ck.meta.rng_state}};
    nlohmann::json tensors = nlohmann::json::object();
    size_t offset = 0;
    for (const auto& [name, entry] : ck.tensors) {
        require(entry.second.size() == shape_numel(entry.first), "ShapeMismatch",
                "checkpoint tensor " + name + " data does not match its shape");
        tensors[name] = {{"dtype", "f32le"}, {"shape", entry.first}, {"offset", offset}};
        offset += entry.second.size() * 4;
    }
    man["tensors"] = std::move(tensors);
    const std::string mtxt = man.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "IoError", "cannot write checkpoint: " + path);
    f.write(kCkptMagic, 8);
    const uint32_t mlen = uint32_t(mtxt.size());
    char lenb[4] = {char(mlen & 0xff), char((mlen >> 8) & 0xff), char((mlen >> 16) & 0xff),
                    char((mlen >> 24) & 0xff)};
    f.write(lenb, 4);
    f.write(mtxt.data(), std::streamsize(mtxt.size()));
    std::string blob;
    blob.reserve(offset);
    for (const auto& [name, entry] : ck.tensors)
        for (float v : entry.second) detail::put_f32le(blob, v);
    f.write(blob.data(), std::streamsize(blob.size()));
    require(f.good(), "IoError", "short write on checkpoint: " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "IoError", "cannot open checkpoint: " + path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    require(raw.size() >= 12, "MalformedCheckpoint", "checkpoint too small");
    require(raw.compare(0, 8, kCkptMagic, 8) == 0, "MalformedCheckpoint",
            "bad checkpoint magic");
    const auto* lb = reinterpret_cast<const unsigned char*>(raw.data() + 8);
    const uint32_t mlen = uint32_t(lb[0]) | (uint32_t(lb[1]) << 8) | (uint32_t(lb[2]) << 16) |
                          (uint32_t(lb[3]) << 24);
    require(raw.size() >= 12 + size_t(mlen), "MalformedCheckpoint", "manifest truncated");

    nlohmann::json man;
    try {
        man = nlohmann::json::parse(raw.substr(12, mlen));
    } catch (const nlohmann::json::exception& e) {
        fail("MalformedCheckpoint", std::string("manifest is not valid JSON: ") + e.what());
    }
    CheckpointData ck;
    const auto& meta = man.at("meta");
    ck.meta.step = meta.at("step").get<uint64_t>();
    ck.meta.adam_steps = meta.at("adam_steps").get<uint64_t>();
    ck.meta.config_hash = meta.at("config_hash").get<std::string>();
    auto rs = meta.at("rng_state").get<std::vector<uint64_t>>();
    require(rs.size() == 4, "MalformedCheckpoint", "rng state must have four words");
    std::copy(rs.begin(), rs.end(), ck.meta.rng_state.begin());

    const char* blob = raw.data() + 12 + mlen;
    const size_t blob_size = raw.size() - 12 - mlen;
    size_t expect_offset = 0;
    for (const auto& [name, ent] : man.at("tensors").items()) {
        require(ent.at("dtype") == "f32le", "MalformedCheckpoint",
                "unsupported dtype for tensor " + name);
        Shape shape = ent.at("shape").get<Shape>();
        const size_t offset = ent.at("offset").get<size_t>();
        require(offset == expect_offset, "MalformedCheckpoint",
                "tensor offsets must be contiguous (at " + name + ")");
        const size_t n = shape_numel(shape);
        require(offset + n * 4 <= blob_size, "MalformedCheckpoint",
                "tensor " + name + " runs past the blob");
        std::vector<float> data(n);
        for (size_t i = 0; i < n; ++i) data[i] = detail::get_f32le(blob + offset + i * 4);
        ck.tensors.emplace(name, std::make_pair(std::move(shape), std::move(data)));
        expect_offset = offset + n * 4;
    }
    require(expect_offset == blob_size, "MalformedCheckpoint",
            "blob size does not match the manifest");
    return ck;
}

// --- store/optimizer packing -----------------------------------------------

template <typename S>
void pack_params(CheckpointData& ck, const ParamStore<S>& ps) {
    for (const auto& [name, t] : ps) {
        std::vector<float> v(t.val().begin(), t.val().end());
        ck.tensors[name] = {t.shape(), std::move(v)};
    }
}

template <typename S>
void unpack_params(const CheckpointData& ck, ParamStore<S>& ps) {
    for (auto& [name, t] : ps) {
        auto it = ck.tensors.find(name);
        require(it != ck.tensors.end(), "MalformedCheckpoint",
                "checkpoint is missing tensor " + name);
        require(it->second.first == t.shape(), "ShapeMismatch",
                "checkpoint tensor " + name + " has shape " + shape_str(it->second.first) +
                    ", model wants " + shape_str(t.shape()));
        for (size_t i = 0; i < t.numel(); ++i) t.val()[i] = S(it->second.second[i]);
    }
}

template <typename S>
void pack_adam(CheckpointData& ck, AdamW<S>& opt, const std::string& prefix) {
    for (auto& [name, m] : opt.moment1())
        ck.tensors[prefix + ".m." + name] = {Shape{m.size()},
                                             std::vector<float>(m.begin(), m.end())};
    for (auto& [name, v] : opt.moment2())
        ck.tensors[prefix + ".v." + name] = {Shape{v.size()},
                                             std::vector<float>(v.begin(), v.end())};
}

template <typename S>
void unpack_adam(const CheckpointData& ck, AdamW<S>& opt, const std::string& prefix) {
    auto copy_in = [&](const std::string& full, std::vector<S>& dst) {
        auto it = ck.tensors.find(full);
        require(it != ck.tensors.end(), "MalformedCheckpoint",
                "checkpoint is missing optimizer tensor " + full);
        require(it->second.second.size() == dst.size(), "ShapeMismatch",
                "optimizer tensor " + full + " has the wrong size");
        for (size_t i = 0; i < dst.size(); ++i) dst[i] = S(it->second.second[i]);
    };
    for (auto& [name, m] : opt.moment1()) copy_in(prefix + ".m." + name, m);
    for (auto& [name, v] : opt.moment2()) copy_in(prefix + ".v." + name, v);
}

}  // namespace wavefm
