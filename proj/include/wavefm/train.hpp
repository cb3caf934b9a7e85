#pragma once

// Training harness: corpus prep, CSV loss curves, the two-stage VAE trainer,
// the flow-matching TTS trainer, inference glue, and report-producing
// evaluation. Everything is seeded through labeled RNG streams so a
// (config, seed) pair fixes every emitted byte.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "wavefm/checkpoint.hpp"
#include "wavefm/config.hpp"
#include "wavefm/dit.hpp"
#include "wavefm/evalmetrics.hpp"
#include "wavefm/flowmatch.hpp"
#include "wavefm/optim.hpp"
#include "wavefm/sampler.hpp"
#include "wavefm/signalio.hpp"
#include "wavefm/spectral.hpp"
#include "wavefm/textcond.hpp"
#include "wavefm/wavvae.hpp"

namespace wavefm {

inline std::vector<CorpusItem> get_corpus(const DataConfig& dc) {
    if (!dc.corpus_dir.empty()) return load_corpus(dc.corpus_dir + "/manifest.jsonl");
    return synth_corpus(dc.synth_items, dc.synth_seed, dc.sample_rate);
}

// Items at the tail of the corpus are held out from training picks.
inline size_t train_item_count(const DataConfig& dc, size_t corpus_size) {
    const size_t held = std::min(dc.eval_items, corpus_size - 1);
    return corpus_size - held;
}

// ---------------------------------------------------------------------------
// loss curves
// ---------------------------------------------------------------------------

namespace detail {
// %.17g round-trips doubles exactly, which keeps curve files byte-stable.
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

class CurveWriter {
public:
    explicit CurveWriter(const std::string& path) : f_(path, std::ios::trunc) {
        require(f_.good(), "IoError", "cannot write curve file: " + path);
        f_ << "step,term,value\n";
    }

    void row(uint64_t step, const std::string& term, double value) {
        f_ << step << ',' << term << ',' << detail::fmt_g17(value) << '\n';
    }

    void rows(uint64_t step, const std::map<std::string, double>& terms) {
        for (const auto& [k, v] : terms) row(step, k, v);
    }

    void flush() { f_.flush(); }

private:
    std::ofstream f_;
};

inline std::map<uint64_t, std::map<std::string, double>> read_curve(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "IoError", "cannot open curve file: " + path);
    std::string line;
    std::getline(f, line);
    require(line == "step,term,value", "MalformedManifest", "bad curve header in " + path);
    std::map<uint64_t, std::map<std::string, double>> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const size_t c1 = line.find(',');
        const size_t c2 = line.find(',', c1 + 1);
        require(c1 != std::string::npos && c2 != std::string::npos, "MalformedManifest",
                "bad curve row: " + line);
        out[std::stoull(line.substr(0, c1))][line.substr(c1 + 1, c2 - c1 - 1)] =
            std::stod(line.substr(c2 + 1));
    }
    return out;
}

// ---------------------------------------------------------------------------
// VAE training (warmup reconstruction phase, then adversarial phase)
// ---------------------------------------------------------------------------

class VaeTrainer {
public:
    VaeTrainer(const RunConfig& rc, std::vector<CorpusItem> corpus)
        : rc_(rc),
          corpus_(std::move(corpus)),
          gen_ps_(mix_seed(rc.seed, "vae-init")),
          disc_ps_(mix_seed(rc.seed, "disc-init")),
          vae_(rc.vae.vae, gen_ps_),
          disc_(rc.vae.disc, disc_ps_),
          gen_opt_(gen_ps_, rc.vae.adam),
          disc_opt_(disc_ps_, rc.vae.adam),
          master_(mix_seed(rc.seed, "vae-train")) {
        require(!corpus_.empty(), "ConfigError", "empty corpus");
        n_train_ = train_item_count(rc_.data, corpus_.size());
        const size_t R = rc_.vae.vae.total_stride();
        crop_samples_ = size_t(rc_.vae.crop_seconds * rc_.data.sample_rate / double(R)) * R;
        require(crop_samples_ >= R, "ConfigError", "crop shorter than one latent frame");
        for (const auto& it : corpus_) {
            padded_.push_back(pad_to_multiple(it.waveform.samples, R));
            require(padded_.back().size() >= crop_samples_, "ConfigError",
                    "crop longer than the shortest corpus item");
        }
    }

    // One optimizer step: generator pass (reconstruction everywhere,
    // adversarial terms only past warmup), then a discriminator pass on the
    // same detached reconstructions. Returns per-term batch means.
    std::map<std::string, double> train_step() {
        ++step_;
        const uint64_t step_seed = master_.next_u64();
        const double lr =
            lr_schedule(step_, rc_.vae.lr_warmup, rc_.vae.lr_hi, rc_.vae.lr_lo, rc_.vae.steps);
        const bool adversarial = step_ > rc_.vae.warmup_steps;
        const size_t B = rc_.vae.batch;
        const float inv = float(1.0 / double(B));

        gen_ps_.zero_grads();
        // The generator's adversarial term backpropagates into discriminator
        // parameters too; those gradients are discarded before the
        // discriminator's own pass.
        if (adversarial) disc_ps_.zero_grads();

        std::map<std::string, double> terms;
        std::vector<Tensor<float>> real, fake;  // stashed for the disc pass
        for (size_t b = 0; b < B; ++b) {
            Rng r(mix_seed(step_seed, "slot", b));
            const auto& p = padded_[r.below(n_train_)];
            const size_t start = size_t(r.below(p.size() - crop_samples_ + 1));
            std::vector<float> xs(p.begin() + long(start), p.begin() + long(start + crop_samples_));
            auto x = Tensor<float>::from({1, crop_samples_}, std::move(xs));
            auto packet = vae_.encode(x, r);
            auto xhat = vae_.decode(packet.z);
            auto xf = reshape(x, {crop_samples_});
            auto xhf = reshape(xhat, {crop_samples_});

            GenLossResult<float> gl;
            if (adversarial) {
                auto df = disc_(xhf);
                auto dr = disc_(xf);
                gl = generator_loss(xf, xhf, packet, &df, &dr, rc_.vae.weights, rc_.vae.recon,
                                    double(rc_.data.sample_rate), TrainPhase::kAdversarial);
            } else {
                gl = generator_loss<float>(xf, xhf, packet, nullptr, nullptr, rc_.vae.weights,
                                           rc_.vae.recon, double(rc_.data.sample_rate),
                                           TrainPhase::kWarmup);
            }
            const double total = double(gl.total.item());
            if (!std::isfinite(total)) {
                auto dump = gl.terms;
                dump["total"] = total;
                abort_non_finite("vae", dump);
            }
            scale(gl.total, inv).backward();
            terms["total"] += total / double(B);
            for (const auto& [k, v] : gl.terms) terms[k] += v / double(B);
            real.push_back(xf.detach());
            fake.push_back(xhf.detach());
        }
        if (!gen_opt_.step(lr)) ++skipped_;

        terms["disc"] = 0.0;
        if (adversarial) {
            disc_ps_.zero_grads();
            for (size_t b = 0; b < B; ++b) {
                auto dl = discriminator_loss(disc_(real[b]), disc_(fake[b]));
                const double dv = double(dl.item());
                if (!std::isfinite(dv)) abort_non_finite("disc", terms);
                scale(dl, inv).backward();
                terms["disc"] += dv / double(B);
            }
            if (!disc_opt_.step(lr)) ++skipped_;
        }
        return terms;
    }

    void run(const std::string& ckpt_path, const std::string& curve_path) {
        CurveWriter curves(curve_path);
        while (step_ < rc_.vae.steps) {
            auto terms = train_step();
            curves.rows(step_, terms);
        }
        curves.flush();
        save(ckpt_path);
    }

    void save(const std::string& path) {
        CheckpointData ck;
        pack_params(ck, gen_ps_);
        pack_params(ck, disc_ps_);
        pack_adam(ck, gen_opt_, "opt.g");
        pack_adam(ck, disc_opt_, "opt.d");
        ck.tensors["opt.g.steps"] = {Shape{1}, {float(gen_opt_.steps_taken())}};
        ck.tensors["opt.d.steps"] = {Shape{1}, {float(disc_opt_.steps_taken())}};
        ck.meta.step = step_;
        ck.meta.adam_steps = gen_opt_.steps_taken();
        ck.meta.config_hash = config_hash(rc_);
        ck.meta.rng_state = master_.state();
        write_checkpoint(path, ck);
    }

    void load(const std::string& path) {
        auto ck = read_checkpoint(path);
        require(ck.meta.config_hash == config_hash(rc_), "ConfigError",
                "checkpoint was written under a different config");
        unpack_params(ck, gen_ps_);
        unpack_params(ck, disc_ps_);
        unpack_adam(ck, gen_opt_, "opt.g");
        unpack_adam(ck, disc_opt_, "opt.d");
        gen_opt_.set_steps_taken(uint64_t(ck.tensors.at("opt.g.steps").second.at(0)));
        disc_opt_.set_steps_taken(uint64_t(ck.tensors.at("opt.d.steps").second.at(0)));
        step_ = ck.meta.step;
        master_.set_state(ck.meta.rng_state);
    }

    uint64_t step() const { return step_; }
    uint64_t skipped_steps() const { return skipped_; }
    ParamStore<float>& gen_params() { return gen_ps_; }
    ParamStore<float>& disc_params() { return disc_ps_; }
    const WavVae<float>& vae() const { return vae_; }

private:
    [[noreturn]] void abort_non_finite(const char* who,
                                       const std::map<std::string, double>& terms) const {
        std::string dump = std::string(who) + " loss went non-finite at step " +
                           std::to_string(step_) + ";";
        for (const auto& [k, v] : terms) dump += " " + k + "=" + detail::fmt_g17(v);
        fail("NonFinite", dump);
    }

    RunConfig rc_;
    std::vector<CorpusItem> corpus_;
    std::vector<std::vector<double>> padded_;
    size_t n_train_ = 0;
    size_t crop_samples_ = 0;
    ParamStore<float> gen_ps_, disc_ps_;
    WavVae<float> vae_;
    StftDiscriminator<float> disc_;
    AdamW<float> gen_opt_, disc_opt_;
    Rng master_;
    uint64_t step_ = 0, skipped_ = 0;
};

// ---------------------------------------------------------------------------
// TTS training (flow matching on frozen-VAE latents)
// ---------------------------------------------------------------------------

// One training example: which item, and the seed for all of its draws
// (t, noise, mask, dropout). Slots are self-contained, so the batch loss
// cannot depend on processing order.
struct TtsBatchSlot {
    size_t item = 0;
    uint64_t seed = 0;
};

class TtsTrainer {
public:
    TtsTrainer(const RunConfig& rc, const std::string& vae_ckpt, std::vector<CorpusItem> corpus)
        : rc_(rc),
          corpus_(std::move(corpus)),
          vae_ps_(0),
          vae_(rc.vae.vae, vae_ps_),
          ps_(mix_seed(rc.seed, "tts-init")),
          text_(rc.tts.text, ps_),
          dit_(rc.tts.dit, ps_),
          master_(mix_seed(rc.seed, "tts-train")) {
        require(!corpus_.empty(), "ConfigError", "empty corpus");
        n_train_ = train_item_count(rc_.data, corpus_.size());
        {
            auto ck = read_checkpoint(vae_ckpt);
            unpack_params(ck, vae_ps_);
        }
        const size_t W = rc_.tts.dit.width, M = rc_.tts.repa_mels;
        repa_w_ = ps_.create("repa.w", {W, M}, 1.0 / std::sqrt(double(W)));
        repa_b_ = ps_.create("repa.b", {M}, 0.0);
        opt_.emplace(ps_, rc_.tts.adam);
        precompute_targets();
    }

    std::vector<TtsBatchSlot> make_batch(uint64_t step_seed) const {
        std::vector<TtsBatchSlot> slots;
        for (size_t b = 0; b < rc_.tts.batch; ++b) {
            Rng pick(mix_seed(step_seed, "pick", b));
            slots.push_back({size_t(pick.below(n_train_)), mix_seed(step_seed, "draws", b)});
        }
        return slots;
    }

    // Mean loss over the batch. Per-term report sums are taken over sorted
    // per-slot values, so the reported numbers are independent of slot order.
    double batch_loss(const std::vector<TtsBatchSlot>& slots, bool do_backward,
                      std::map<std::string, double>* terms = nullptr) {
        require(!slots.empty(), "ConfigError", "empty batch");
        const float inv = float(1.0 / double(slots.size()));
        std::vector<double> cfms, repas;
        for (const auto& s : slots) {
            auto [loss, cfm, repa] = slot_loss(s);
            if (do_backward) scale(loss, inv).backward();
            cfms.push_back(cfm);
            repas.push_back(repa);
        }
        auto sorted_mean = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            double a = 0;
            for (double x : v) a += x;
            return a / double(v.size());
        };
        const double cfm = sorted_mean(cfms), repa = sorted_mean(repas);
        const double total = cfm + rc_.tts.lambda_repa * repa;
        if (terms) {
            (*terms)["cfm"] = cfm;
            (*terms)["repa"] = repa;
            (*terms)["total"] = total;
        }
        return total;
    }

    std::map<std::string, double> train_step() {
        ++step_;
        const uint64_t step_seed = master_.next_u64();
        auto slots = make_batch(step_seed);
        ps_.zero_grads();
        std::map<std::string, double> terms;
        batch_loss(slots, true, &terms);
        if (!std::isfinite(terms["total"])) {
            std::string dump = "tts loss went non-finite at step " + std::to_string(step_) + ";";
            for (const auto& [k, v] : terms) dump += " " + k + "=" + detail::fmt_g17(v);
            fail("NonFinite", dump);
        }
        const double lr =
            lr_schedule(step_, rc_.tts.lr_warmup, rc_.tts.lr_hi, rc_.tts.lr_lo, rc_.tts.steps);
        if (!opt_->step(lr)) ++skipped_;
        return terms;
    }

    void run(const std::string& ckpt_path, const std::string& curve_path) {
        CurveWriter curves(curve_path);
        while (step_ < rc_.tts.steps) {
            auto terms = train_step();
            curves.rows(step_, terms);
        }
        curves.flush();
        save(ckpt_path);
    }

    void save(const std::string& path) {
        CheckpointData ck;
        pack_params(ck, ps_);
        pack_adam(ck, *opt_, "opt");
        ck.tensors["opt.steps"] = {Shape{1}, {float(opt_->steps_taken())}};
        ck.tensors["latnorm.mu"] = {Shape{lat_mu_.size()}, lat_mu_};
        ck.tensors["latnorm.sd"] = {Shape{lat_sd_.size()}, lat_sd_};
        ck.meta.step = step_;
        ck.meta.adam_steps = opt_->steps_taken();
        ck.meta.config_hash = config_hash(rc_);
        ck.meta.rng_state = master_.state();
        write_checkpoint(path, ck);
    }

    void load(const std::string& path) {
        auto ck = read_checkpoint(path);
        require(ck.meta.config_hash == config_hash(rc_), "ConfigError",
                "checkpoint was written under a different config");
        unpack_params(ck, ps_);
        unpack_adam(ck, *opt_, "opt");
        opt_->set_steps_taken(uint64_t(ck.tensors.at("opt.steps").second.at(0)));
        lat_mu_ = ck.tensors.at("latnorm.mu").second;
        lat_sd_ = ck.tensors.at("latnorm.sd").second;
        renormalize_latents();
        step_ = ck.meta.step;
        master_.set_state(ck.meta.rng_state);
    }

    uint64_t step() const { return step_; }
    uint64_t skipped_steps() const { return skipped_; }
    ParamStore<float>& params() { return ps_; }
    const TextCond<float>& text() const { return text_; }
    size_t item_frames(size_t i) const { return frames_.at(i); }

private:
    // Latents are the frozen encoder's mu (or a fixed-seed sample), shifted
    // and scaled to roughly unit statistics per channel so the noise and data
    // ends of the flow live on the same scale. The statistics come from the
    // training split only and travel with the checkpoint.
    void precompute_targets() {
        const size_t R = rc_.vae.vae.total_stride();
        const size_t D = rc_.vae.vae.latent_dim;
        const size_t M = rc_.tts.repa_mels;
        size_t fft = 1;
        while (fft < R) fft *= 2;
        const StftConfig mel_cfg{fft, R, fft};

        raw_latents_.clear();
        frames_.clear();
        repa_tgt_.clear();
        for (size_t i = 0; i < corpus_.size(); ++i) {
            auto padded = pad_to_multiple(corpus_[i].waveform.samples, R);
            std::vector<float> xs(padded.begin(), padded.end());
            auto x = Tensor<float>::from({1, padded.size()}, std::move(xs));
            auto [mu, logvar] = vae_.encode_stats(x);
            std::vector<float> lat = mu.val();
            if (!rc_.tts.use_mu) {
                Rng er(mix_seed(rc_.seed, "tts-latent", i));
                const auto& lv = logvar.val();
                for (size_t k = 0; k < lat.size(); ++k)
                    lat[k] += std::exp(0.5f * lv[k]) * float(er.normal());
            }
            const size_t F = lat.size() / D;
            raw_latents_.push_back(std::move(lat));
            frames_.push_back(F);

            size_t mel_frames = 0;
            auto mel = log_mel_frames(padded, mel_cfg, M, double(rc_.data.sample_rate),
                                      &mel_frames);
            auto melr = resample_nearest(mel, M, mel_frames, F);
            repa_tgt_.push_back(std::vector<float>(melr.begin(), melr.end()));
        }

        lat_mu_.assign(D, 0.0f);
        lat_sd_.assign(D, 0.0f);
        std::vector<double> acc(D, 0.0), acc2(D, 0.0);
        size_t n = 0;
        for (size_t i = 0; i < n_train_; ++i) {
            for (size_t d = 0; d < D; ++d)
                for (size_t f = 0; f < frames_[i]; ++f) {
                    const double v = raw_latents_[i][d * frames_[i] + f];
                    acc[d] += v;
                    acc2[d] += v * v;
                }
            n += frames_[i];
        }
        for (size_t d = 0; d < D; ++d) {
            const double m = acc[d] / double(n);
            const double var = std::max(0.0, acc2[d] / double(n) - m * m);
            lat_mu_[d] = float(m);
            lat_sd_[d] = float(std::max(std::sqrt(var), 1e-3));
        }
        renormalize_latents();
    }

    void renormalize_latents() {
        const size_t D = rc_.vae.vae.latent_dim;
        latents_.clear();
        for (size_t i = 0; i < raw_latents_.size(); ++i) {
            std::vector<float> z = raw_latents_[i];
            for (size_t d = 0; d < D; ++d)
                for (size_t f = 0; f < frames_[i]; ++f)
                    z[d * frames_[i] + f] = (z[d * frames_[i] + f] - lat_mu_[d]) / lat_sd_[d];
            latents_.push_back(std::move(z));
        }
    }

    // Draw order per slot: t, noise, mask, dropout coin.
    std::tuple<Tensor<float>, double, double> slot_loss(const TtsBatchSlot& slot) {
        require(slot.item < n_train_, "ConfigError", "slot references a held-out item");
        Rng r(slot.seed);
        const size_t D = rc_.tts.dit.latent_dim;
        const size_t F = frames_[slot.item];
        const double t = r.uniform();
        std::vector<float> z0v(D * F);
        for (auto& v : z0v) v = float(r.normal());
        auto mask = make_span_mask(F, r, rc_.tts.mask_lo, rc_.tts.mask_hi);
        const bool drop = cond_dropout(r, rc_.tts.drop_p);

        auto z1 = Tensor<float>::from({D, F}, latents_[slot.item]);
        auto z0 = Tensor<float>::from({D, F}, std::move(z0v));
        ModelInput<float> in;
        in.z_t = interpolate(z0, z1, float(t));
        in.t = t;
        if (drop) {
            in.z_ctx = Tensor<float>::zeros({D, F});
            in.ctx_present = false;
        } else {
            in.z_ctx = make_context(z1, mask);
            in.q = text_.forward_tokens(corpus_[slot.item].tokens).q;
        }
        auto out = dit_.forward(in);
        auto l_cfm = cfm_loss(out.v, z0, z1, mask);
        auto tgt = Tensor<float>::from({rc_.tts.repa_mels, F}, repa_tgt_[slot.item]);
        auto l_repa = repa_loss(out.repa_hidden, tgt, repa_w_, repa_b_);
        auto total = add(l_cfm, scale(l_repa, float(rc_.tts.lambda_repa)));
        return {total, double(l_cfm.item()), double(l_repa.item())};
    }

    RunConfig rc_;
    std::vector<CorpusItem> corpus_;
    size_t n_train_ = 0;
    ParamStore<float> vae_ps_;
    WavVae<float> vae_;
    ParamStore<float> ps_;
    TextCond<float> text_;
    Dit<float> dit_;
    Tensor<float> repa_w_, repa_b_;
    std::optional<AdamW<float>> opt_;
    std::vector<std::vector<float>> raw_latents_, latents_, repa_tgt_;
    std::vector<size_t> frames_;
    std::vector<float> lat_mu_, lat_sd_;
    Rng master_;
    uint64_t step_ = 0, skipped_ = 0;
};

// ---------------------------------------------------------------------------
// inference glue
// ---------------------------------------------------------------------------

// Frozen VAE loaded from a checkpoint, for encode/decode round trips.
class VaeSystem {
public:
    VaeSystem(const RunConfig& rc, const std::string& ckpt)
        : rc_(rc), ps_(0), vae_(rc.vae.vae, ps_) {
        auto ck = read_checkpoint(ckpt);
        unpack_params(ck, ps_);
    }

    size_t total_stride() const { return rc_.vae.vae.total_stride(); }

    // mu of the padded input, [D, F] row-major.
    std::pair<std::vector<float>, size_t> encode_mu(const std::vector<double>& samples) const {
        auto padded = pad_to_multiple(samples, total_stride());
        std::vector<float> xs(padded.begin(), padded.end());
        auto x = Tensor<float>::from({1, padded.size()}, std::move(xs));
        auto [mu, logvar] = vae_.encode_stats(x);
        return {mu.val(), mu.dim(1)};
    }

    std::vector<double> decode(const std::vector<float>& latent, size_t frames) const {
        const size_t D = rc_.vae.vae.latent_dim;
        require(latent.size() == D * frames, "ShapeMismatch", "latent size mismatch");
        auto z = Tensor<float>::from({D, frames}, latent);
        auto xhat = vae_.decode(z);
        return std::vector<double>(xhat.val().begin(), xhat.val().end());
    }

    const WavVae<float>& vae() const { return vae_; }

private:
    RunConfig rc_;
    ParamStore<float> ps_;
    WavVae<float> vae_;
};

// Frozen VAE + text encoder + velocity network wired into the guided solver.
class TtsSystem {
public:
    TtsSystem(const RunConfig& rc, const std::string& vae_ckpt, const std::string& tts_ckpt)
        : rc_(rc),
          vae_(rc, vae_ckpt),
          ps_(0),
          text_(rc.tts.text, ps_),
          dit_(rc.tts.dit, ps_) {
        ps_.create("repa.w", {rc.tts.dit.width, rc.tts.repa_mels}, 0.0);
        ps_.create("repa.b", {rc.tts.repa_mels}, 0.0);
        auto ck = read_checkpoint(tts_ckpt);
        unpack_params(ck, ps_);
        lat_mu_ = ck.tensors.at("latnorm.mu").second;
        lat_sd_ = ck.tensors.at("latnorm.sd").second;
        require(lat_mu_.size() == rc.tts.dit.latent_dim && lat_sd_.size() == lat_mu_.size(),
                "ShapeMismatch", "latent statistics do not match the latent dim");
    }

    // Prompt audio is truncated to whole latent frames so the context region
    // carries no padding bleed. total_frames must exceed the context length.
    Waveform synthesize(const std::vector<double>& prompt_samples,
                        const std::vector<size_t>& tokens, size_t total_frames, uint64_t seed,
                        uint64_t* model_calls = nullptr) const {
        const size_t R = vae_.total_stride();
        const size_t D = rc_.tts.dit.latent_dim;
        const size_t prompt_len = std::max(R, prompt_samples.size() / R * R);
        require(prompt_samples.size() >= R, "SignalTooShort",
                "prompt shorter than one latent frame");
        std::vector<double> prompt(prompt_samples.begin(),
                                   prompt_samples.begin() + long(prompt_len));

        auto [mu, t_ctx] = vae_.encode_mu(prompt);
        std::vector<double> prompt_latent(size_t(D) * t_ctx);
        for (size_t d = 0; d < D; ++d)
            for (size_t f = 0; f < t_ctx; ++f)
                prompt_latent[d * t_ctx + f] =
                    (double(mu[d * t_ctx + f]) - lat_mu_[d]) / lat_sd_[d];

        auto rep = text_.forward_tokens(tokens);
        const auto& qv = rep.q.val();

        InferenceRequest req;
        req.prompt_latent = std::move(prompt_latent);
        req.latent_dim = D;
        req.ctx_frames = t_ctx;
        req.total_frames = total_frames;
        req.q.assign(qv.begin(), qv.end());
        req.q_len = rep.q.dim(0);
        req.q_dim = rep.q.dim(1);
        req.seed = seed;

        uint64_t calls = 0;
        FieldFn field = [&](const FieldQuery& fq) {
            ++calls;
            ModelInput<float> in;
            in.z_t = Tensor<float>::from({fq.D, fq.T},
                                         std::vector<float>(fq.z_t.begin(), fq.z_t.end()));
            in.z_ctx = Tensor<float>::from({fq.D, fq.T},
                                           std::vector<float>(fq.z_ctx.begin(), fq.z_ctx.end()));
            in.t = fq.t;
            in.ctx_present = fq.conditional;
            if (fq.conditional) in.q = rep.q;
            auto out = dit_.forward(in);
            return std::vector<double>(out.v.val().begin(), out.v.val().end());
        };
        auto gen = euler_solve(field, req, rc_.sampler);
        if (model_calls) *model_calls += calls;

        const size_t G = total_frames - t_ctx;
        std::vector<float> z(size_t(D) * total_frames);
        for (size_t d = 0; d < D; ++d) {
            for (size_t f = 0; f < t_ctx; ++f)
                z[d * total_frames + f] =
                    float(req.prompt_latent[d * t_ctx + f] * lat_sd_[d] + lat_mu_[d]);
            for (size_t f = 0; f < G; ++f)
                z[d * total_frames + t_ctx + f] =
                    float(gen[d * G + f] * lat_sd_[d] + lat_mu_[d]);
        }
        Waveform w;
        w.sample_rate = rc_.data.sample_rate;
        w.samples = vae_.decode(z, total_frames);
        return w;
    }

    const VaeSystem& vae() const { return vae_; }
    const TextCond<float>& text() const { return text_; }

private:
    RunConfig rc_;
    VaeSystem vae_;
    ParamStore<float> ps_;
    TextCond<float> text_;
    Dit<float> dit_;
    std::vector<float> lat_mu_, lat_sd_;
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

// VAE reconstruction metrics, and synthesis metrics when a TTS checkpoint is
// given. split picks "train", "heldout", or "all" corpus items.
inline EvalReport evaluate(const RunConfig& rc, const std::string& vae_ckpt,
                           const std::string& tts_ckpt, const std::string& split) {
    auto corpus = get_corpus(rc.data);
    require(!corpus.empty(), "ConfigError", "empty corpus");
    const size_t n_train = train_item_count(rc.data, corpus.size());
    size_t lo = 0, hi = corpus.size();
    if (split == "train")
        hi = n_train;
    else if (split == "heldout")
        lo = n_train;
    else
        require(split == "all", "ConfigError", "split must be train|heldout|all");
    require(lo < hi, "ConfigError", "selected split is empty");

    EvalReport rep;
    uint64_t model_calls = 0, decoded = 0;

    std::optional<VaeSystem> vs;
    if (!vae_ckpt.empty()) vs.emplace(rc, vae_ckpt);
    std::optional<TtsSystem> ts;
    if (!tts_ckpt.empty()) {
        require(!vae_ckpt.empty(), "ConfigError", "synthesis eval needs the vae checkpoint too");
        ts.emplace(rc, vae_ckpt, tts_ckpt);
    }

    const size_t R = rc.vae.vae.total_stride();
    for (size_t i = lo; i < hi; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "item_%05zu", i);
        UttEval u;
        u.id = name;
        const auto& item = corpus[i];
        auto padded = pad_to_multiple(item.waveform.samples, R);

        if (vs) {
            auto [mu, frames] = vs->encode_mu(item.waveform.samples);
            auto xhat = vs->decode(mu, frames);
            decoded += xhat.size();
            u.metrics["lsd"] = log_spectral_distance(padded, xhat);
            u.metrics["si_sdr"] = si_sdr(padded, xhat);
        }
        if (ts) {
            const size_t n_tok = item.tokens.size();
            const size_t seg = item.waveform.samples.size() / n_tok;
            const size_t prompt_len = n_tok >= 2 ? seg : seg / 2;
            std::vector<double> prompt(item.waveform.samples.begin(),
                                       item.waveform.samples.begin() + long(prompt_len));
            const size_t total_frames = padded.size() / R;
            auto gen = ts->synthesize(prompt, item.tokens, total_frames,
                                      mix_seed(rc.seed, "eval-synth", i), &model_calls);
            decoded += gen.samples.size();
            u.metrics["token_acc"] = token_accuracy(gen, item.tokens);
            u.metrics["mel_dist"] =
                mel_distance(padded, gen.samples, double(rc.data.sample_rate));
        }
        rep.utterances.push_back(std::move(u));
    }
    rep.runtime["items"] = hi - lo;
    rep.runtime["model_calls"] = model_calls;
    rep.runtime["decoded_samples"] = decoded;
    rep.runtime["nfe"] = rc.sampler.nfe;
    rep.finalize();
    return rep;
}

}  // namespace wavefm
