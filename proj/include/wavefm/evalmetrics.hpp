#pragma once

// Desk-scale evaluation: log-spectral distance and SI-SDR for waveform
// reconstruction, dominant-frequency token accuracy and mel distance for
// synthesis, plus a JSON report whose aggregates are recomputed from the
// per-utterance entries. Runtime stats are deterministic work counters, so
// reports satisfy the bit-exact determinism contract.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavefm/common.hpp"
#include "wavefm/fft.hpp"
#include "wavefm/flowmatch.hpp"
#include "wavefm/signalio.hpp"
#include "wavefm/spectral.hpp"

namespace wavefm {

inline constexpr double kSiSdrCap = 100.0;

// Mean over resolutions of the frame-averaged L2 distance between log
// magnitudes. Zero iff the spectra match.
inline double log_spectral_distance(const std::vector<double>& x, const std::vector<double>& y,
                                    const std::vector<StftConfig>& resolutions = {
                                        {512, 128, 512}, {1024, 256, 1024}, {2048, 512, 2048}}) {
    require(x.size() == y.size(), "LengthMismatch", "lsd wants equal-length signals");
    require(!resolutions.empty(), "ConfigError", "lsd needs at least one resolution");
    double total = 0;
    for (const auto& cfg : resolutions) {
        auto sx = stft(x, cfg);
        auto sy = stft(y, cfg);
        double acc = 0;
        for (size_t f = 0; f < sx.frames; ++f) {
            double frame = 0;
            for (size_t b = 0; b < sx.n_bins; ++b) {
                const double d = std::log(std::abs(sx.at(b, f)) + kLogEps) -
                                 std::log(std::abs(sy.at(b, f)) + kLogEps);
                frame += d * d;
            }
            acc += std::sqrt(frame / double(sx.n_bins));
        }
        total += acc / double(sx.frames);
    }
    return total / double(resolutions.size());
}

// Scale-invariant SDR in dB, capped so an exact reconstruction reports a
// finite number.
inline double si_sdr(const std::vector<double>& ref, const std::vector<double>& est,
                     double cap = kSiSdrCap) {
    require(ref.size() == est.size(), "LengthMismatch", "si-sdr wants equal-length signals");
    double dot = 0, ref_e = 0;
    for (size_t i = 0; i < ref.size(); ++i) {
        dot += est[i] * ref[i];
        ref_e += ref[i] * ref[i];
    }
    if (ref_e < 1e-30) return -cap;
    const double a = dot / ref_e;
    double sig = 0, err = 0;
    for (size_t i = 0; i < ref.size(); ++i) {
        const double s = a * ref[i];
        const double e = est[i] - s;
        sig += s * s;
        err += e * e;
    }
    if (err < 1e-30 * std::max(1.0, sig)) return cap;
    return std::min(cap, 10.0 * std::log10(sig / err));
}

// Dominant-frequency classification of one segment against the fixed tone
// inventory: compare spectrum magnitude at the 32 inventory frequencies and
// pick the strongest. A flat (noise) spectrum lands on a uniformly random
// index, which keeps the chance level at 1/32.
inline size_t classify_segment_token(const std::vector<double>& seg, double sample_rate) {
    require(seg.size() >= 16, "SignalTooShort", "segment too short to classify");
    size_t n = 1;
    while (n * 2 <= seg.size()) n *= 2;
    const size_t lead = (seg.size() - n) / 2;  // center crop to a power of two
    std::vector<double> w(seg.begin() + lead, seg.begin() + lead + n);
    auto spec = rfft(w);
    size_t best = 0;
    double best_mag = -1;
    for (size_t k = 0; k < kInventorySize; ++k) {
        const double bin_f = inventory_freq(k) * double(n) / sample_rate;
        const long bin = std::lround(bin_f);
        double mag = 0;
        for (long b = bin - 1; b <= bin + 1; ++b)
            if (b >= 0 && size_t(b) < spec.size()) mag += std::abs(spec[size_t(b)]);
        if (mag > best_mag) {
            best_mag = mag;
            best = k;
        }
    }
    return best;
}

// Fraction of equal-duration segments whose dominant frequency matches the
// conditioned token.
inline double token_accuracy(const Waveform& w, const std::vector<size_t>& tokens) {
    require(!tokens.empty(), "ShapeMismatch", "no tokens to score");
    const size_t seg_len = w.samples.size() / tokens.size();
    require(seg_len >= 16, "SignalTooShort", "audio too short for the token count");
    size_t hits = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        std::vector<double> seg(w.samples.begin() + i * seg_len,
                                w.samples.begin() + (i + 1) * seg_len);
        hits += classify_segment_token(seg, double(w.sample_rate)) == tokens[i];
    }
    return double(hits) / double(tokens.size());
}

// Mean absolute log-mel difference; the estimate's frames are resampled onto
// the reference frame count first.
inline double mel_distance(const std::vector<double>& ref, const std::vector<double>& est,
                           double sample_rate, const StftConfig& cfg = {1024, 256, 1024},
                           size_t n_mels = 80) {
    size_t fr = 0, fe = 0;
    auto mr = log_mel_frames(ref, cfg, n_mels, sample_rate, &fr);
    auto me = log_mel_frames(est, cfg, n_mels, sample_rate, &fe);
    auto mea = resample_nearest(me, n_mels, fe, fr);
    double acc = 0;
    for (size_t i = 0; i < mr.size(); ++i) acc += std::abs(mr[i] - mea[i]);
    return acc / double(mr.size());
}

struct UttEval {
    std::string id;
    std::map<std::string, double> metrics;
};

struct EvalReport {
    std::vector<UttEval> utterances;
    std::map<std::string, double> aggregate;
    std::map<std::string, uint64_t> runtime;  // deterministic counters

    // Aggregates are means of the per-utterance entries.
    void finalize() {
        aggregate.clear();
        std::map<std::string, std::pair<double, size_t>> acc;
        for (const auto& u : utterances)
            for (const auto& [k, v] : u.metrics) {
                acc[k].first += v;
                acc[k].second += 1;
            }
        for (const auto& [k, p] : acc) aggregate[k] = p.first / double(p.second);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["utterances"] = nlohmann::json::array();
        for (const auto& u : utterances) {
            nlohmann::json e;
            e["id"] = u.id;
            for (const auto& [k, v] : u.metrics) e[k] = v;
            j["utterances"].push_back(std::move(e));
        }
        j["aggregate"] = aggregate;
        j["runtime"] = runtime;
        return j;
    }
};

}  // namespace wavefm
