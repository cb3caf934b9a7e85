// Command-line entry points: corpus synthesis, VAE and TTS training,
// latent encode/decode, guided synthesis, and evaluation. Every command takes
// --config plus targeted overrides; all outputs are deterministic in
// (config, seed).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "wavefm/tensorfile.hpp"
#include "wavefm/train.hpp"

namespace fs = std::filesystem;
using namespace wavefm;

namespace {

struct Overrides {
    int64_t seed = -1;
    int64_t steps = -1;
    int64_t nfe = -1;
    std::string guidance;
    double alpha = std::nan("");
    double eta = std::nan("");
    double beta = std::nan("");
};

void add_common(CLI::App* cmd, std::string& config_path, Overrides& ov) {
    cmd->add_option("--config", config_path, "run config JSON")->required();
    cmd->add_option("--seed", ov.seed, "override config seed");
}

void add_sampler_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--nfe", ov.nfe, "solver steps");
    cmd->add_option("--guidance", ov.guidance, "none|cfg|apg");
    cmd->add_option("--alpha", ov.alpha, "guidance strength");
    cmd->add_option("--eta", ov.eta, "parallel damping");
    cmd->add_option("--beta", ov.beta, "reverse momentum");
}

RunConfig load_with_overrides(const std::string& path, const Overrides& ov,
                              bool vae_steps = false, bool tts_steps = false) {
    RunConfig rc = load_run_config(path);
    if (ov.seed >= 0) rc.seed = uint64_t(ov.seed);
    if (ov.steps >= 0 && vae_steps) rc.vae.steps = size_t(ov.steps);
    if (ov.steps >= 0 && tts_steps) rc.tts.steps = size_t(ov.steps);
    if (ov.nfe >= 0) rc.sampler.nfe = size_t(ov.nfe);
    if (!ov.guidance.empty()) {
        if (ov.guidance == "none")
            rc.sampler.guidance = Guidance::kNone;
        else if (ov.guidance == "cfg")
            rc.sampler.guidance = Guidance::kCfg;
        else if (ov.guidance == "apg")
            rc.sampler.guidance = Guidance::kApg;
        else
            fail("ConfigError", "--guidance must be none|cfg|apg");
    }
    if (!std::isnan(ov.alpha)) rc.sampler.alpha = ov.alpha;
    if (!std::isnan(ov.eta)) rc.sampler.eta = ov.eta;
    if (!std::isnan(ov.beta)) rc.sampler.beta = ov.beta;
    rc.validate();
    return rc;
}

std::vector<size_t> parse_tokens(const std::string& csv) {
    std::vector<size_t> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoul(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    require(!out.empty(), "ConfigError", "empty token list");
    for (size_t t : out)
        require(t < kInventorySize, "UnknownToken", "token id out of inventory range");
    return out;
}

size_t token_chars(const std::vector<size_t>& tokens) {
    size_t n = 0;
    for (size_t t : tokens) n += 1 + std::to_string(int(inventory_freq(t))).size();
    return n;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"waveform-latent flow-matching TTS"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "runs", resume, vae_ckpt, tts_ckpt;
    std::string in_path, out_path, prompt_path, tokens_csv, prompt_tokens_csv;
    std::string split = "heldout";
    int64_t duration_frames = 0;
    Overrides ov;

    auto* synth = app.add_subcommand("corpus-synth", "write the synthetic corpus to disk");
    add_common(synth, config_path, ov);
    synth->add_option("--out-dir", out_dir, "corpus directory")->required();

    auto* vtrain = app.add_subcommand("vae-train", "train the waveform autoencoder");
    add_common(vtrain, config_path, ov);
    vtrain->add_option("--steps", ov.steps, "override training steps");
    vtrain->add_option("--out-dir", out_dir, "artifact directory");
    vtrain->add_option("--resume", resume, "checkpoint to continue from");

    auto* ttrain = app.add_subcommand("tts-train", "train the latent velocity model");
    add_common(ttrain, config_path, ov);
    ttrain->add_option("--steps", ov.steps, "override training steps");
    ttrain->add_option("--vae-ckpt", vae_ckpt, "frozen autoencoder checkpoint")->required();
    ttrain->add_option("--out-dir", out_dir, "artifact directory");
    ttrain->add_option("--resume", resume, "checkpoint to continue from");

    auto* venc = app.add_subcommand("vae-encode", "encode a wav into a latent tensor file");
    add_common(venc, config_path, ov);
    venc->add_option("--vae-ckpt", vae_ckpt, "autoencoder checkpoint")->required();
    venc->add_option("--in", in_path, "input wav")->required();
    venc->add_option("--out", out_path, "output tensor base path (.f32/.json)")->required();

    auto* vdec = app.add_subcommand("vae-decode", "decode a latent tensor file into a wav");
    add_common(vdec, config_path, ov);
    vdec->add_option("--vae-ckpt", vae_ckpt, "autoencoder checkpoint")->required();
    vdec->add_option("--in", in_path, "input tensor base path")->required();
    vdec->add_option("--out", out_path, "output wav")->required();

    auto* infer = app.add_subcommand("tts-infer", "synthesize speech from a prompt and tokens");
    add_common(infer, config_path, ov);
    infer->add_option("--vae-ckpt", vae_ckpt, "autoencoder checkpoint")->required();
    infer->add_option("--tts-ckpt", tts_ckpt, "velocity model checkpoint")->required();
    infer->add_option("--prompt", prompt_path, "prompt wav")->required();
    infer->add_option("--tokens", tokens_csv, "target token ids, comma separated")->required();
    infer->add_option("--prompt-tokens", prompt_tokens_csv,
                      "prompt transcript token ids (for duration estimation)");
    infer->add_option("--duration-frames", duration_frames,
                      "total latent frames; 0 = estimate from --prompt-tokens");
    infer->add_option("--out", out_path, "output wav")->required();
    add_sampler_flags(infer, ov);

    auto* ev = app.add_subcommand("eval", "reconstruction and synthesis metrics");
    add_common(ev, config_path, ov);
    ev->add_option("--vae-ckpt", vae_ckpt, "autoencoder checkpoint")->required();
    ev->add_option("--tts-ckpt", tts_ckpt, "velocity model checkpoint (enables synthesis eval)");
    ev->add_option("--split", split, "train|heldout|all");
    ev->add_option("--out", out_path, "report JSON path");
    add_sampler_flags(ev, ov);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            auto rc = load_with_overrides(config_path, ov);
            auto items = synth_corpus(rc.data.synth_items, rc.data.synth_seed,
                                      rc.data.sample_rate);
            auto manifest = save_corpus(items, out_dir);
            std::cout << "wrote " << items.size() << " items, manifest " << manifest << "\n";
        } else if (*vtrain) {
            auto rc = load_with_overrides(config_path, ov, /*vae_steps=*/true);
            fs::create_directories(out_dir);
            VaeTrainer tr(rc, get_corpus(rc.data));
            if (!resume.empty()) tr.load(resume);
            const std::string ck = out_dir + "/vae.ckpt";
            tr.run(ck, out_dir + "/vae_curves.csv");
            std::cout << "vae checkpoint " << ck << " at step " << tr.step();
            if (tr.skipped_steps()) std::cout << " (" << tr.skipped_steps() << " skipped)";
            std::cout << "\n";
        } else if (*ttrain) {
            auto rc = load_with_overrides(config_path, ov, false, /*tts_steps=*/true);
            fs::create_directories(out_dir);
            TtsTrainer tr(rc, vae_ckpt, get_corpus(rc.data));
            if (!resume.empty()) tr.load(resume);
            const std::string ck = out_dir + "/tts.ckpt";
            tr.run(ck, out_dir + "/tts_curves.csv");
            std::cout << "tts checkpoint " << ck << " at step " << tr.step();
            if (tr.skipped_steps()) std::cout << " (" << tr.skipped_steps() << " skipped)";
            std::cout << "\n";
        } else if (*venc) {
            auto rc = load_with_overrides(config_path, ov);
            VaeSystem sys(rc, vae_ckpt);
            auto w = read_wav(in_path);
            auto [mu, frames] = sys.encode_mu(w.samples);
            nlohmann::json extra = {{"sample_rate", w.sample_rate},
                                    {"total_stride", sys.total_stride()},
                                    {"frame_rate", rc.vae.vae.frame_rate()}};
            write_tensor_f32(out_path, mu, {rc.vae.vae.latent_dim, frames}, extra);
            std::cout << "wrote " << out_path << ".f32 [" << rc.vae.vae.latent_dim << ", "
                      << frames << "]\n";
        } else if (*vdec) {
            auto rc = load_with_overrides(config_path, ov);
            VaeSystem sys(rc, vae_ckpt);
            auto tf = read_tensor_f32(in_path);
            require(tf.shape.size() == 2 && tf.shape[0] == rc.vae.vae.latent_dim,
                    "ShapeMismatch", "latent file does not match the configured latent dim");
            Waveform w;
            w.sample_rate = rc.data.sample_rate;
            w.samples = sys.decode(tf.data, tf.shape[1]);
            write_wav(w, out_path);
            std::cout << "wrote " << out_path << " (" << w.samples.size() << " samples)\n";
        } else if (*infer) {
            auto rc = load_with_overrides(config_path, ov);
            TtsSystem sys(rc, vae_ckpt, tts_ckpt);
            auto prompt = read_wav(prompt_path);
            auto tokens = parse_tokens(tokens_csv);
            const size_t R = rc.vae.vae.total_stride();
            const size_t t_ctx = std::max<size_t>(1, prompt.samples.size() / R);
            size_t total = size_t(duration_frames);
            if (total == 0) {
                require(!prompt_tokens_csv.empty(), "ConfigError",
                        "need --duration-frames or --prompt-tokens");
                auto ptoks = parse_tokens(prompt_tokens_csv);
                total = estimate_duration(t_ctx, token_chars(ptoks), token_chars(tokens));
            }
            require(total > t_ctx, "EmptyGenRegion", "duration does not exceed the prompt");
            uint64_t calls = 0;
            auto w = sys.synthesize(prompt.samples, tokens, total, rc.seed, &calls);
            write_wav(w, out_path);
            std::cout << "wrote " << out_path << " (" << w.samples.size() << " samples, "
                      << calls << " field evals)\n";
        } else if (*ev) {
            auto rc = load_with_overrides(config_path, ov);
            auto rep = evaluate(rc, vae_ckpt, tts_ckpt, split);
            const std::string txt = rep.to_json().dump(2) + "\n";
            if (!out_path.empty()) {
                std::ofstream f(out_path, std::ios::trunc);
                require(f.good(), "IoError", "cannot write report: " + out_path);
                f << txt;
            }
            for (const auto& [k, v] : rep.aggregate)
                std::cout << k << " = " << detail::fmt_g17(v) << "\n";
        }
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
