#pragma once

// Run configuration: one JSON document with data / vae / tts / sampler
// sections. Every key is checked against the known set; unknown keys are
// rejected before any training starts. The canonical serialization feeds a
// stable hash stored in checkpoints.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavefm/common.hpp"
#include "wavefm/dit.hpp"
#include "wavefm/optim.hpp"
#include "wavefm/sampler.hpp"
#include "wavefm/textcond.hpp"
#include "wavefm/wavvae.hpp"

namespace wavefm {

struct DataConfig {
    std::string corpus_dir;  // nonempty = load saved corpus; empty = synthesize
    size_t synth_items = 32;
    uint64_t synth_seed = 7;
    int sample_rate = 24000;
    size_t eval_items = 4;  // held out from the end of the corpus
};

struct VaeTrainConfig {
    VaeConfig vae;
    DiscConfig disc;
    GenLossWeights weights;
    ReconLossConfig recon;
    size_t warmup_steps = 100;
    size_t steps = 200;
    size_t batch = 4;
    double crop_seconds = 0.5;
    double lr_hi = 1e-4, lr_lo = 1e-5;
    size_t lr_warmup = 10;
    AdamConfig adam{0.9, 0.95, 1e-8, 0.0};
};

struct TtsTrainConfig {
    DitConfig dit;
    TextCondConfig text;
    size_t steps = 500;
    size_t batch = 4;
    double lr_hi = 1e-4, lr_lo = 1e-5;
    size_t lr_warmup = 10;
    AdamConfig adam{0.9, 0.95, 1e-8, 0.0};
    double drop_p = 0.1;
    double lambda_repa = 0.5;
    double mask_lo = 0.7, mask_hi = 1.0;
    size_t repa_mels = 40;
    bool use_mu = true;  // condition on the bottleneck mean, not a sample
};

struct RunConfig {
    uint64_t seed = 1;
    DataConfig data;
    VaeTrainConfig vae;
    TtsTrainConfig tts;
    SamplerConfig sampler;

    void validate() const {
        vae.vae.validate();
        require(vae.steps >= 1 && vae.batch >= 1, "ConfigError", "bad vae step/batch counts");
        require(vae.warmup_steps <= vae.steps, "ConfigError",
                "vae warmup cannot exceed total steps");
        require(vae.crop_seconds > 0, "ConfigError", "crop must be positive");
        require(vae.recon.stft_resolutions.size() >= 1, "ConfigError", "need stft resolutions");
        tts.dit.validate();
        tts.text.validate();
        require(tts.dit.latent_dim == vae.vae.latent_dim, "ConfigError",
                "dit latent dim must match the vae latent dim");
        require(tts.text.dim == tts.dit.text_dim, "ConfigError",
                "text width must match the dit cross-attention width");
        require(tts.steps >= 1 && tts.batch >= 1, "ConfigError", "bad tts step/batch counts");
        require(tts.drop_p >= 0.0 && tts.drop_p <= 1.0, "ConfigError", "bad dropout");
        require(0.0 <= tts.mask_lo && tts.mask_lo <= tts.mask_hi && tts.mask_hi <= 1.0,
                "ConfigError", "bad mask ratio range");
        sampler.validate();
        require(data.sample_rate > 0, "ConfigError", "bad sample rate");
        require(data.corpus_dir.size() || data.synth_items > 0, "ConfigError",
                "need a corpus directory or a synthetic item count");
    }
};

namespace detail {

// Tracks which keys were consumed; everything else is an error. Holds its
// document by value so callers can hand it freshly built section objects.
class JsonReader {
public:
    JsonReader(nlohmann::json j, std::string ctx) : j_(std::move(j)), ctx_(std::move(ctx)) {
        require(j_.is_object(), "ConfigError", ctx_ + " must be a JSON object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            fail("ConfigError", ctx_ + "." + key + " has the wrong type");
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    nlohmann::json section(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return nlohmann::json::object();
        return j_.at(key);
    }

    void done() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            require(seen_.count(it.key()), "ConfigError",
                    "unknown config key: " + ctx_ + "." + it.key());
    }

private:
    nlohmann::json j_;
    std::string ctx_;
    std::set<std::string> seen_;
};

inline std::vector<StftConfig> ffts_to_stfts(const std::vector<size_t>& ffts) {
    std::vector<StftConfig> out;
    for (size_t f : ffts) out.push_back({f, f / 4, f});
    return out;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig rc;
    detail::JsonReader top(j, "config");
    top.get("seed", rc.seed);

    {
        detail::JsonReader r(top.section("data"), "data");
        r.get("corpus_dir", rc.data.corpus_dir);
        r.get("synth_items", rc.data.synth_items);
        r.get("synth_seed", rc.data.synth_seed);
        r.get("sample_rate", rc.data.sample_rate);
        r.get("eval_items", rc.data.eval_items);
        r.done();
    }
    {
        auto sec = top.section("vae");
        detail::JsonReader r(sec, "vae");
        r.get("strides", rc.vae.vae.strides);
        r.get("channels", rc.vae.vae.channels);
        r.get("latent_dim", rc.vae.vae.latent_dim);
        r.get("kernel", rc.vae.vae.kernel);
        r.get("dilations", rc.vae.vae.dilations);
        rc.vae.vae.sample_rate = double(rc.data.sample_rate);

        std::vector<size_t> disc_ffts;
        for (auto& s : rc.vae.disc.scales) disc_ffts.push_back(s.fft_size);
        r.get("disc_ffts", disc_ffts);
        rc.vae.disc.scales = detail::ffts_to_stfts(disc_ffts);
        r.get("disc_width", rc.vae.disc.width);
        r.get("disc_layers", rc.vae.disc.layers);

        std::vector<size_t> recon_ffts;
        for (auto& s : rc.vae.recon.stft_resolutions) recon_ffts.push_back(s.fft_size);
        std::vector<size_t> mel_bins;
        for (auto& m : rc.vae.recon.mel_scales) mel_bins.push_back(m.n_mels);
        r.get("recon_ffts", recon_ffts);
        r.get("mel_bins", mel_bins);
        require(recon_ffts.size() == mel_bins.size(), "ConfigError",
                "vae.recon_ffts and vae.mel_bins must pair up");
        rc.vae.recon.stft_resolutions = detail::ffts_to_stfts(recon_ffts);
        rc.vae.recon.mel_scales.clear();
        for (size_t i = 0; i < recon_ffts.size(); ++i)
            rc.vae.recon.mel_scales.push_back(
                {StftConfig{recon_ffts[i], recon_ffts[i] / 4, recon_ffts[i]}, mel_bins[i]});

        if (r.has("weights")) {
            detail::JsonReader w(r.section("weights"), "vae.weights");
            w.get("spec", rc.vae.weights.spec);
            w.get("mel", rc.vae.weights.mel);
            w.get("time", rc.vae.weights.time);
            w.get("kl", rc.vae.weights.kl);
            w.get("adv", rc.vae.weights.adv);
            w.get("fm", rc.vae.weights.fm);
            w.done();
        } else {
            r.section("weights");
        }
        r.get("warmup_steps", rc.vae.warmup_steps);
        r.get("steps", rc.vae.steps);
        r.get("batch", rc.vae.batch);
        r.get("crop_seconds", rc.vae.crop_seconds);
        r.get("lr_hi", rc.vae.lr_hi);
        r.get("lr_lo", rc.vae.lr_lo);
        r.get("lr_warmup", rc.vae.lr_warmup);
        r.get("weight_decay", rc.vae.adam.weight_decay);
        r.done();
    }
    {
        detail::JsonReader r(top.section("tts"), "tts");
        r.get("layers", rc.tts.dit.layers);
        r.get("width", rc.tts.dit.width);
        r.get("heads", rc.tts.dit.heads);
        r.get("repa_layer", rc.tts.dit.repa_layer);
        r.get("text_dim", rc.tts.dit.text_dim);
        rc.tts.dit.latent_dim = rc.vae.vae.latent_dim;
        rc.tts.text.dim = rc.tts.dit.text_dim;
        r.get("text_vocab", rc.tts.text.vocab);
        r.get("text_layers", rc.tts.text.enc_layers);
        r.get("text_heads", rc.tts.text.heads);
        r.get("refine_blocks", rc.tts.text.refine_blocks);
        r.get("text_ext_dim", rc.tts.text.ext_dim);
        r.get("steps", rc.tts.steps);
        r.get("batch", rc.tts.batch);
        r.get("lr_hi", rc.tts.lr_hi);
        r.get("lr_lo", rc.tts.lr_lo);
        r.get("lr_warmup", rc.tts.lr_warmup);
        r.get("weight_decay", rc.tts.adam.weight_decay);
        r.get("drop_p", rc.tts.drop_p);
        r.get("lambda_repa", rc.tts.lambda_repa);
        r.get("mask_lo", rc.tts.mask_lo);
        r.get("mask_hi", rc.tts.mask_hi);
        r.get("repa_mels", rc.tts.repa_mels);
        r.get("use_mu", rc.tts.use_mu);
        r.done();
    }
    {
        detail::JsonReader r(top.section("sampler"), "sampler");
        r.get("nfe", rc.sampler.nfe);
        std::string g = rc.sampler.guidance == Guidance::kNone  ? "none"
                        : rc.sampler.guidance == Guidance::kCfg ? "cfg"
                                                                : "apg";
        r.get("guidance", g);
        if (g == "none")
            rc.sampler.guidance = Guidance::kNone;
        else if (g == "cfg")
            rc.sampler.guidance = Guidance::kCfg;
        else if (g == "apg")
            rc.sampler.guidance = Guidance::kApg;
        else
            fail("ConfigError", "sampler.guidance must be none|cfg|apg, got " + g);
        r.get("alpha", rc.sampler.alpha);
        r.get("eta", rc.sampler.eta);
        r.get("beta", rc.sampler.beta);
        r.get("t_clip", rc.sampler.t_clip);
        r.done();
    }
    top.done();
    rc.validate();
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "IoError", "cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("ConfigError", std::string("config is not valid JSON: ") + e.what());
    }
    return parse_run_config(j);
}

// Canonical serialization: every field in a fixed order, so the hash is
// stable across load/override cycles.
inline nlohmann::json config_to_json(const RunConfig& rc) {
    nlohmann::json j;
    j["seed"] = rc.seed;
    j["data"] = {{"corpus_dir", rc.data.corpus_dir},
                 {"synth_items", rc.data.synth_items},
                 {"synth_seed", rc.data.synth_seed},
                 {"sample_rate", rc.data.sample_rate},
                 {"eval_items", rc.data.eval_items}};
    std::vector<size_t> disc_ffts, recon_ffts, mel_bins;
    for (auto& s : rc.vae.disc.scales) disc_ffts.push_back(s.fft_size);
    for (auto& s : rc.vae.recon.stft_resolutions) recon_ffts.push_back(s.fft_size);
    for (auto& m : rc.vae.recon.mel_scales) mel_bins.push_back(m.n_mels);
    j["vae"] = {{"strides", rc.vae.vae.strides},
                {"channels", rc.vae.vae.channels},
                {"latent_dim", rc.vae.vae.latent_dim},
                {"kernel", rc.vae.vae.kernel},
                {"dilations", rc.vae.vae.dilations},
                {"disc_ffts", disc_ffts},
                {"disc_width", rc.vae.disc.width},
                {"disc_layers", rc.vae.disc.layers},
                {"recon_ffts", recon_ffts},
                {"mel_bins", mel_bins},
                {"weights",
                 {{"spec", rc.vae.weights.spec},
                  {"mel", rc.vae.weights.mel},
                  {"time", rc.vae.weights.time},
                  {"kl", rc.vae.weights.kl},
                  {"adv", rc.vae.weights.adv},
                  {"fm", rc.vae.weights.fm}}},
                {"warmup_steps", rc.vae.warmup_steps},
                {"steps", rc.vae.steps},
                {"batch", rc.vae.batch},
                {"crop_seconds", rc.vae.crop_seconds},
                {"lr_hi", rc.vae.lr_hi},
                {"lr_lo", rc.vae.lr_lo},
                {"lr_warmup", rc.vae.lr_warmup},
                {"weight_decay", rc.vae.adam.weight_decay}};
    j["tts"] = {{"layers", rc.tts.dit.layers},
                {"width", rc.tts.dit.width},
                {"heads", rc.tts.dit.heads},
                {"repa_layer", rc.tts.dit.repa_layer},
                {"text_dim", rc.tts.dit.text_dim},
                {"text_vocab", rc.tts.text.vocab},
                {"text_layers", rc.tts.text.enc_layers},
                {"text_heads", rc.tts.text.heads},
                {"refine_blocks", rc.tts.text.refine_blocks},
                {"text_ext_dim", rc.tts.text.ext_dim},
                {"steps", rc.tts.steps},
                {"batch", rc.tts.batch},
                {"lr_hi", rc.tts.lr_hi},
                {"lr_lo", rc.tts.lr_lo},
                {"lr_warmup", rc.tts.lr_warmup},
                {"weight_decay", rc.tts.adam.weight_decay},
                {"drop_p", rc.tts.drop_p},
                {"lambda_repa", rc.tts.lambda_repa},
                {"mask_lo", rc.tts.mask_lo},
                {"mask_hi", rc.tts.mask_hi},
                {"repa_mels", rc.tts.repa_mels},
                {"use_mu", rc.tts.use_mu}};
    j["sampler"] = {{"nfe", rc.sampler.nfe},
                    {"guidance", rc.sampler.guidance == Guidance::kNone  ? "none"
                                 : rc.sampler.guidance == Guidance::kCfg ? "cfg"
                                                                         : "apg"},
                    {"alpha", rc.sampler.alpha},
                    {"eta", rc.sampler.eta},
                    {"beta", rc.sampler.beta},
                    {"t_clip", rc.sampler.t_clip}};
    return j;
}

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string config_hash(const RunConfig& rc) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(config_to_json(rc).dump())));
    return buf;
}

}  // namespace wavefm
