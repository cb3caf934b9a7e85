#pragma once

// Flat binary tensor files: raw little-endian float32 next to a JSON
// manifest describing dtype and shape. `base` names the pair without
// extension: base.f32 holds the data, base.json the manifest.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavefm/common.hpp"
#include "wavefm/tensor.hpp"

namespace wavefm {

struct TensorFile {
    std::vector<float> data;
    Shape shape;
    nlohmann::json manifest;
};

namespace detail {

inline void put_f32le(std::string& buf, float v) {
    uint32_t u = std::bit_cast<uint32_t>(v);
    buf.push_back(char(u & 0xff));
    buf.push_back(char((u >> 8) & 0xff));
    buf.push_back(char((u >> 16) & 0xff));
    buf.push_back(char((u >> 24) & 0xff));
}

inline float get_f32le(const char* p) {
    const auto* b = reinterpret_cast<const unsigned char*>(p);
    uint32_t u = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
                 (uint32_t(b[3]) << 24);
    return std::bit_cast<float>(u);
}

}  // namespace detail

template <typename T>
void write_tensor_f32(const std::string& base, const std::vector<T>& data, const Shape& shape,
                      nlohmann::json extra = nlohmann::json::object()) {
    require(data.size() == shape_numel(shape), "ShapeMismatch",
            "tensor file data does not match shape " + shape_str(shape));
    std::string buf;
    buf.reserve(data.size() * 4);
    for (T v : data) detail::put_f32le(buf, static_cast<float>(v));
    std::ofstream fb(base + ".f32", std::ios::binary);
    require(fb.good(), "IoError", "cannot write " + base + ".f32");
    fb.write(buf.data(), std::streamsize(buf.size()));
    require(fb.good(), "IoError", "short write on " + base + ".f32");

    nlohmann::json man = std::move(extra);
    man["dtype"] = "f32le";
    man["shape"] = shape;
    std::ofstream fm(base + ".json");
    require(fm.good(), "IoError", "cannot write " + base + ".json");
    fm << man.dump(2) << "\n";
}

inline TensorFile read_tensor_f32(const std::string& base) {
    std::ifstream fm(base + ".json");
    require(fm.good(), "MalformedManifest", "missing manifest " + base + ".json");
    nlohmann::json man;
    try {
        fm >> man;
    } catch (const std::exception& e) {
        fail("MalformedManifest", std::string("bad manifest json: ") + e.what());
    }
    require(man.is_object() && man.contains("dtype") && man.contains("shape"),
            "MalformedManifest", "manifest needs dtype and shape");
    require(man["dtype"] == "f32le", "MalformedManifest",
            "unsupported dtype " + man["dtype"].dump());
    require(man["shape"].is_array(), "MalformedManifest", "shape must be an array");
    Shape shape;
    for (const auto& d : man["shape"]) {
        require(d.is_number_unsigned() || (d.is_number_integer() && d.get<int64_t>() >= 0),
                "MalformedManifest", "shape entries must be non-negative integers");
        shape.push_back(d.get<size_t>());
    }

    std::ifstream fb(base + ".f32", std::ios::binary);
    require(fb.good(), "IoError", "missing data file " + base + ".f32");
    std::string raw((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    const size_t n = shape_numel(shape);
    require(raw.size() == n * 4, "ShapeMismatch",
            "data file size " + std::to_string(raw.size()) + " does not match shape " +
                shape_str(shape));
    TensorFile tf;
    tf.shape = std::move(shape);
    tf.manifest = std::move(man);
    tf.data.resize(n);
    for (size_t i = 0; i < n; ++i) tf.data[i] = detail::get_f32le(raw.data() + i * 4);
    return tf;
}

}  // namespace wavefm
