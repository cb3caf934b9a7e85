#pragma once

// WAV file I/O (16-bit PCM mono), segmentation, and a deterministic
// synthetic corpus: short items built from enveloped sinusoid "phones"
// drawn from a fixed frequency inventory, with the inventory indices
// doubling as transcript tokens. This gives the pipeline a ground-truth
// audio-to-token alignment without external data.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "wavefm/common.hpp"
#include "wavefm/rng.hpp"

namespace wavefm {

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 24000;

    double seconds() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

struct CorpusItem {
    Waveform waveform;
    std::vector<size_t> tokens;
    std::vector<std::string> token_texts;
};

// ---------------------------------------------------------------------------
// WAV container
// ---------------------------------------------------------------------------

namespace wavio {

inline uint32_t rd_u32(const unsigned char* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
inline uint16_t rd_u16(const unsigned char* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

inline void wr_u32(std::vector<unsigned char>& b, uint32_t v) {
    b.push_back(v & 0xff);
    b.push_back((v >> 8) & 0xff);
    b.push_back((v >> 16) & 0xff);
    b.push_back((v >> 24) & 0xff);
}
inline void wr_u16(std::vector<unsigned char>& b, uint16_t v) {
    b.push_back(v & 0xff);
    b.push_back((v >> 8) & 0xff);
}

}  // namespace wavio

inline Waveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "IoError", "cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    require(buf.size() >= 12, "MalformedHeader", "file too small for RIFF header: " + path);
    require(std::memcmp(buf.data(), "RIFF", 4) == 0 && std::memcmp(buf.data() + 8, "WAVE", 4) == 0,
            "MalformedHeader", "not a RIFF/WAVE file: " + path);

    bool have_fmt = false;
    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    size_t data_off = 0, data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const char* id = reinterpret_cast<const char*>(buf.data() + pos);
        uint32_t len = wavio::rd_u32(buf.data() + pos + 4);
        require(pos + 8 + len <= buf.size(), "MalformedHeader", "truncated chunk in " + path);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            require(len >= 16, "MalformedHeader", "fmt chunk too small in " + path);
            const unsigned char* p = buf.data() + pos + 8;
            format = wavio::rd_u16(p);
            channels = wavio::rd_u16(p + 2);
            rate = wavio::rd_u32(p + 4);
            bits = wavio::rd_u16(p + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_off = pos + 8;
            data_len = len;
        }
        pos += 8 + len + (len & 1);  // chunks are word aligned
    }
    require(have_fmt && data_off > 0, "MalformedHeader", "missing fmt/data chunk in " + path);
    require(format == 1, "UnsupportedFormat", "only PCM supported: " + path);
    require(channels == 1, "UnsupportedFormat", "only mono supported: " + path);
    require(bits == 16, "UnsupportedFormat", "only 16-bit supported: " + path);

    Waveform w;
    w.sample_rate = static_cast<int>(rate);
    const size_t n = data_len / 2;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
        int16_t s = static_cast<int16_t>(wavio::rd_u16(buf.data() + data_off + 2 * i));
        w.samples[i] = static_cast<double>(s) / 32768.0;
    }
    return w;
}

// Clamp to [-1, 1], scale by 32768 and round to nearest, then clamp into the
// 16-bit range (so +1.0 maps to 32767). Division by 32768 on read makes the
// read -> write round trip exact for every 16-bit value.
inline int16_t quantize_sample(double v) {
    require(std::isfinite(v), "NonFinite", "sample is not finite");
    v = std::clamp(v, -1.0, 1.0);
    long q = std::lround(v * 32768.0);
    q = std::clamp(q, -32768l, 32767l);
    return static_cast<int16_t>(q);
}

inline void write_wav(const Waveform& w, const std::string& path) {
    std::vector<unsigned char> buf;
    buf.reserve(44 + w.samples.size() * 2);
    const uint32_t data_len = static_cast<uint32_t>(w.samples.size() * 2);
    buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
    wavio::wr_u32(buf, 36 + data_len);
    buf.insert(buf.end(), {'W', 'A', 'V', 'E'});
    buf.insert(buf.end(), {'f', 'm', 't', ' '});
    wavio::wr_u32(buf, 16);
    wavio::wr_u16(buf, 1);  // PCM
    wavio::wr_u16(buf, 1);  // mono
    wavio::wr_u32(buf, static_cast<uint32_t>(w.sample_rate));
    wavio::wr_u32(buf, static_cast<uint32_t>(w.sample_rate) * 2);  // byte rate
    wavio::wr_u16(buf, 2);   // block align
    wavio::wr_u16(buf, 16);  // bits
    buf.insert(buf.end(), {'d', 'a', 't', 'a'});
    wavio::wr_u32(buf, data_len);
    for (double v : w.samples) wavio::wr_u16(buf, static_cast<uint16_t>(quantize_sample(v)));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "IoError", "cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(f.good(), "IoError", "write failed: " + path);
}

// ---------------------------------------------------------------------------
// segmentation
// ---------------------------------------------------------------------------

// Consecutive non-overlapping chunks of floor(seconds*sr) samples. A final
// remainder shorter than half a chunk is dropped, otherwise zero-padded.
inline std::vector<Waveform> segment(const Waveform& w, double seconds) {
    require(seconds > 0, "InvalidRange", "segment length must be positive");
    const size_t chunk = static_cast<size_t>(seconds * w.sample_rate);
    require(chunk > 0, "InvalidRange", "segment shorter than one sample");
    std::vector<Waveform> out;
    size_t pos = 0;
    while (pos + chunk <= w.samples.size()) {
        Waveform c;
        c.sample_rate = w.sample_rate;
        c.samples.assign(w.samples.begin() + pos, w.samples.begin() + pos + chunk);
        out.push_back(std::move(c));
        pos += chunk;
    }
    const size_t rem = w.samples.size() - pos;
    if (rem * 2 >= chunk && rem > 0) {
        Waveform c;
        c.sample_rate = w.sample_rate;
        c.samples.assign(w.samples.begin() + pos, w.samples.end());
        c.samples.resize(chunk, 0.0);
        out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

// 32 tone classes; index k is both the token id and the phone identity.
inline constexpr size_t kInventorySize = 32;

inline double inventory_freq(size_t k) {
    require(k < kInventorySize, "UnknownToken", "inventory index out of range");
    return 300.0 + 110.0 * static_cast<double>(k);
}

// One item: 1-3 equal-length phones of 1.0-1.3 s each, every phone an
// amplitude-enveloped sinusoid from the inventory plus a small noise floor.
// Equal phone lengths keep the token-to-time alignment exactly uniform,
// which downstream evaluation relies on.
inline CorpusItem synth_item(uint64_t seed, size_t index, int sample_rate = 24000) {
    Rng rng(mix_seed(seed, "corpus-item", index));
    const size_t n_phones = 1 + rng.below(3);
    const double phone_sec = rng.uniform(1.0, 1.3);
    const size_t phone_len = static_cast<size_t>(phone_sec * sample_rate);
    const size_t fade = static_cast<size_t>(0.05 * sample_rate);

    CorpusItem item;
    item.waveform.sample_rate = sample_rate;
    item.waveform.samples.assign(n_phones * phone_len, 0.0);

    for (size_t p = 0; p < n_phones; ++p) {
        const size_t k = rng.below(kInventorySize);
        const double freq = inventory_freq(k);
        const double amp = rng.uniform(0.4, 0.8);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        item.tokens.push_back(k);
        item.token_texts.push_back("f" + std::to_string(static_cast<int>(freq)));
        for (size_t i = 0; i < phone_len; ++i) {
            double env = 1.0;
            if (i < fade) env = 0.5 - 0.5 * std::cos(M_PI * double(i) / double(fade));
            if (phone_len - 1 - i < fade)
                env = std::min(env, 0.5 - 0.5 * std::cos(M_PI * double(phone_len - 1 - i) / double(fade)));
            const double t = double(i) / double(sample_rate);
            item.waveform.samples[p * phone_len + i] =
                amp * env * std::sin(2.0 * M_PI * freq * t + phase);
        }
    }
    for (auto& s : item.waveform.samples) {
        s += 0.003 * rng.normal();
        s = std::clamp(s, -0.95, 0.95);
    }
    return item;
}

inline std::vector<CorpusItem> synth_corpus(size_t n_items, uint64_t seed, int sample_rate = 24000) {
    require(n_items > 0, "InvalidRange", "corpus must have at least one item");
    std::vector<CorpusItem> items;
    items.reserve(n_items);
    for (size_t i = 0; i < n_items; ++i) items.push_back(synth_item(seed, i, sample_rate));
    return items;
}

// Writes item WAVs plus a JSON-lines manifest: {"wav": path, "tokens": [...]}.
inline std::string save_corpus(const std::vector<CorpusItem>& items, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::string manifest_path = dir + "/manifest.jsonl";
    std::ofstream mf(manifest_path, std::ios::trunc);
    require(mf.good(), "IoError", "cannot write manifest: " + manifest_path);
    for (size_t i = 0; i < items.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "item_%05zu.wav", i);
        const std::string wav_path = dir + "/" + name;
        write_wav(items[i].waveform, wav_path);
        mf << "{\"wav\": \"" << name << "\", \"tokens\": [";
        for (size_t t = 0; t < items[i].tokens.size(); ++t)
            mf << (t ? ", " : "") << items[i].tokens[t];
        mf << "]}\n";
    }
    return manifest_path;
}

// Reads a JSON-lines manifest written by save_corpus. WAV paths are resolved
// relative to the manifest's directory.
std::vector<CorpusItem> load_corpus(const std::string& manifest_path);

}  // namespace wavefm

#include <json.hpp>

namespace wavefm {

inline std::vector<CorpusItem> load_corpus(const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    require(mf.good(), "IoError", "cannot open manifest: " + manifest_path);
    const std::string dir = std::filesystem::path(manifest_path).parent_path().string();
    std::vector<CorpusItem> items;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail("MalformedManifest", std::string("bad manifest line: ") + e.what());
        }
        require(rec.contains("wav") && rec.contains("tokens"), "MalformedManifest",
                "manifest record needs wav and tokens fields");
        CorpusItem item;
        std::string wav = rec["wav"].get<std::string>();
        item.waveform = read_wav(dir.empty() ? wav : dir + "/" + wav);
        for (auto& t : rec["tokens"]) {
            size_t id = t.get<size_t>();
            require(id < kInventorySize, "UnknownToken", "token id beyond inventory");
            item.tokens.push_back(id);
            item.token_texts.push_back("f" + std::to_string(static_cast<int>(inventory_freq(id))));
        }
        require(!item.tokens.empty(), "MalformedManifest", "item with no tokens");
        items.push_back(std::move(item));
    }
    return items;
}

}  // namespace wavefm
