#pragma once

// Text-side conditioning: dual-embedding combination, ConvNeXt-style
// refinement, a small built-in encoder for synthetic token streams, and
// ingestion of precomputed features from tensor files.

#include <cmath>
#include <string>
#include <vector>

#include "wavefm/attention.hpp"
#include "wavefm/common.hpp"
#include "wavefm/params.hpp"
#include "wavefm/tensor.hpp"
#include "wavefm/tensorfile.hpp"

namespace wavefm {

template <typename S>
struct TextFeatures {
    Tensor<S> raw_embedding;  // [L, E]
    Tensor<S> last_hidden;    // [L, E]
};

template <typename S>
struct TextRep {
    Tensor<S> q;  // [L, E]
};

template <typename S>
void check_text_features(const TextFeatures<S>& f) {
    require(f.raw_embedding.shape().size() == 2 && f.last_hidden.shape().size() == 2,
            "ShapeMismatch", "text features must be 2-D");
    require(f.raw_embedding.shape() == f.last_hidden.shape(), "ShapeMismatch",
            "raw/hidden feature shapes differ");
    require(all_finite(f.raw_embedding.val()) && all_finite(f.last_hidden.val()), "NonFinite",
            "text features must be finite");
}

// q = LN(last_hidden) + LN(raw_embedding), non-parametric LN over features.
// The normalization equalizes the scales of the two streams before the sum.
template <typename S>
TextRep<S> combine_embeddings(const TextFeatures<S>& f) {
    check_text_features(f);
    return {add(layer_norm_rows(f.last_hidden, S(1e-6)),
                layer_norm_rows(f.raw_embedding, S(1e-6)))};
}

struct TextCondConfig {
    size_t vocab = 32;
    size_t dim = 64;  // E; matches the velocity model's cross-attention width
    size_t enc_layers = 2;
    size_t heads = 4;
    size_t refine_blocks = 4;
    size_t kernel = 7;
    size_t ext_dim = 0;  // width of externally computed features, 0 = dim

    void validate() const {
        require(vocab > 0 && dim > 0 && heads > 0 && kernel % 2 == 1, "ConfigError",
                "bad text conditioning config");
        require(dim % heads == 0, "ConfigError", "text dim not divisible by heads");
    }
    size_t feature_dim() const { return ext_dim == 0 ? dim : ext_dim; }
};

// ConvNeXt-style residual block over [L, E]: depthwise temporal conv,
// LN, pointwise expand, GELU, global response normalization, contract.
// The contracting projection starts at zero, so each block begins as the
// identity map.
template <typename S>
class ConvNextBlock {
public:
    ConvNextBlock(ParamStore<S>& ps, const std::string& prefix, size_t dim, size_t kernel)
        : dim_(dim) {
        const size_t hidden = 4 * dim;
        dw_w_ = ps.create(prefix + ".dw.w", {dim, kernel}, 1.0 / std::sqrt(double(kernel)));
        dw_b_ = ps.create(prefix + ".dw.b", {dim}, 0.0);
        ln_g_ = ps.create_const(prefix + ".ln.g", {dim}, S(1));
        ln_b_ = ps.create(prefix + ".ln.b", {dim}, 0.0);
        up_w_ = ps.create(prefix + ".up.w", {dim, hidden}, 1.0 / std::sqrt(double(dim)));
        up_b_ = ps.create(prefix + ".up.b", {hidden}, 0.0);
        grn_g_ = ps.create(prefix + ".grn.g", {hidden}, 0.0);
        grn_b_ = ps.create(prefix + ".grn.b", {hidden}, 0.0);
        down_w_ = ps.create(prefix + ".down.w", {hidden, dim}, 0.0);
        down_b_ = ps.create(prefix + ".down.b", {dim}, 0.0);
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        auto h = transpose2d(dwconv1d_same(transpose2d(x), dw_w_, dw_b_));
        h = bcast_add_cols(bcast_mul_cols(layer_norm_rows(h, S(1e-6)), ln_g_), ln_b_);
        h = gelu_t(bcast_add_cols(matmul(h, up_w_), up_b_));
        h = grn(h);
        h = bcast_add_cols(matmul(h, down_w_), down_b_);
        return add(x, h);
    }

private:
    // y = gamma * (h * N(h)) + beta + h with N(h) the per-channel L2 norm
    // over time divided by its mean across channels.
    Tensor<S> grn(const Tensor<S>& h) const {
        auto gx = sqrt_t(sum_axis0(square_t(h)));
        auto nx = div_scalar(gx, mean_all(gx), S(1e-6));
        auto scaled = bcast_mul_cols(bcast_mul_cols(h, nx), grn_g_);
        return add(bcast_add_cols(scaled, grn_b_), h);
    }

    size_t dim_;
    Tensor<S> dw_w_, dw_b_, ln_g_, ln_b_, up_w_, up_b_, grn_g_, grn_b_, down_w_, down_b_;
};

// Text conditioning stack. Owns the toy encoder parameters, the optional
// width adapter for external features, and the refinement blocks.
template <typename S>
class TextCond {
public:
    TextCond(const TextCondConfig& cfg, ParamStore<S>& ps, const std::string& prefix = "text")
        : cfg_(cfg) {
        cfg_.validate();
        const size_t E = cfg_.dim;
        const double wstd = 1.0 / std::sqrt(double(E));
        embed_ = ps.create(prefix + ".embed", {cfg_.vocab, E}, 1.0);
        for (size_t l = 0; l < cfg_.enc_layers; ++l) {
            const std::string p = prefix + ".enc" + std::to_string(l);
            EncLayer lay;
            lay.ln1_g = ps.create_const(p + ".ln1.g", {E}, S(1));
            lay.ln1_b = ps.create(p + ".ln1.b", {E}, 0.0);
            lay.wq = ps.create(p + ".wq", {E, E}, wstd);
            lay.wk = ps.create(p + ".wk", {E, E}, wstd);
            lay.wv = ps.create(p + ".wv", {E, E}, wstd);
            lay.wo = ps.create(p + ".wo", {E, E}, wstd);
            lay.bq = ps.create(p + ".bq", {E}, 0.0);
            lay.bk = ps.create(p + ".bk", {E}, 0.0);
            lay.bv = ps.create(p + ".bv", {E}, 0.0);
            lay.bo = ps.create(p + ".bo", {E}, 0.0);
            lay.ln2_g = ps.create_const(p + ".ln2.g", {E}, S(1));
            lay.ln2_b = ps.create(p + ".ln2.b", {E}, 0.0);
            lay.mlp_w1 = ps.create(p + ".mlp.w1", {E, 4 * E}, wstd);
            lay.mlp_b1 = ps.create(p + ".mlp.b1", {4 * E}, 0.0);
            lay.mlp_w2 = ps.create(p + ".mlp.w2", {4 * E, E}, 1.0 / std::sqrt(double(4 * E)));
            lay.mlp_b2 = ps.create(p + ".mlp.b2", {E}, 0.0);
            enc_.push_back(std::move(lay));
        }
        if (cfg_.ext_dim != 0 && cfg_.ext_dim != cfg_.dim) {
            adapter_w_ = ps.create(prefix + ".adapt.w", {cfg_.ext_dim, E},
                                   1.0 / std::sqrt(double(cfg_.ext_dim)));
            adapter_b_ = ps.create(prefix + ".adapt.b", {E}, 0.0);
            has_adapter_ = true;
        }
        for (size_t b = 0; b < cfg_.refine_blocks; ++b)
            blocks_.emplace_back(ps, prefix + ".refine" + std::to_string(b), E, cfg_.kernel);
    }

    // Embedding lookup plus a 2-layer bidirectional self-attention encoder.
    TextFeatures<S> toy_text_encode(const std::vector<size_t>& tokens) const {
        require(!tokens.empty(), "ShapeMismatch", "empty token sequence");
        auto raw = embed(embed_, tokens);
        auto h = raw;
        for (const auto& lay : enc_) {
            auto x = bcast_add_cols(bcast_mul_cols(layer_norm_rows(h, S(1e-6)), lay.ln1_g),
                                    lay.ln1_b);
            auto q = rope_apply(bcast_add_cols(matmul(x, lay.wq), lay.bq), cfg_.heads, 0);
            auto k = rope_apply(bcast_add_cols(matmul(x, lay.wk), lay.bk), cfg_.heads, 0);
            auto v = bcast_add_cols(matmul(x, lay.wv), lay.bv);
            auto attn = multihead_attention(q, k, v, cfg_.heads);
            h = add(h, bcast_add_cols(matmul(attn, lay.wo), lay.bo));
            auto y = bcast_add_cols(bcast_mul_cols(layer_norm_rows(h, S(1e-6)), lay.ln2_g),
                                    lay.ln2_b);
            y = gelu_t(bcast_add_cols(matmul(y, lay.mlp_w1), lay.mlp_b1));
            h = add(h, bcast_add_cols(matmul(y, lay.mlp_w2), lay.mlp_b2));
        }
        return {raw, h};
    }

    // LN-combine the two streams; map external widths onto the model width.
    TextRep<S> combine(const TextFeatures<S>& f) const {
        const size_t w = f.raw_embedding.shape().size() == 2 ? f.raw_embedding.dim(1) : 0;
        if (has_adapter_ && w == cfg_.ext_dim) {
            auto rep = combine_embeddings(f);
            rep.q = bcast_add_cols(matmul(rep.q, adapter_w_), adapter_b_);
            return rep;
        }
        require(w == cfg_.dim, "ShapeMismatch",
                "text feature width " + std::to_string(w) + " does not match model width " +
                    std::to_string(cfg_.dim));
        return combine_embeddings(f);
    }

    TextRep<S> refine(const TextRep<S>& rep) const {
        require(rep.q.shape().size() == 2 && rep.q.dim(1) == cfg_.dim, "ShapeMismatch",
                "refine expects [L, " + std::to_string(cfg_.dim) + "]");
        auto h = rep.q;
        for (const auto& b : blocks_) h = b.forward(h);
        return {h};
    }

    TextRep<S> forward_tokens(const std::vector<size_t>& tokens) const {
        return refine(combine(toy_text_encode(tokens)));
    }
    TextRep<S> forward_features(const TextFeatures<S>& f) const { return refine(combine(f)); }

    const TextCondConfig& config() const { return cfg_; }

private:
    struct EncLayer {
        Tensor<S> ln1_g, ln1_b, wq, wk, wv, wo, bq, bk, bv, bo;
        Tensor<S> ln2_g, ln2_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };

    TextCondConfig cfg_;
    Tensor<S> embed_;
    std::vector<EncLayer> enc_;
    bool has_adapter_ = false;
    Tensor<S> adapter_w_, adapter_b_;
    std::vector<ConvNextBlock<S>> blocks_;
};

// Feature file pairs: <base>.raw.{f32,json} and <base>.hid.{f32,json}.

template <typename S>
void save_text_features(const std::string& base, const TextFeatures<S>& f) {
    check_text_features(f);
    write_tensor_f32(base + ".raw", f.raw_embedding.val(), f.raw_embedding.shape());
    write_tensor_f32(base + ".hid", f.last_hidden.val(), f.last_hidden.shape());
}

template <typename S>
TextFeatures<S> load_text_features(const std::string& base) {
    auto raw = read_tensor_f32(base + ".raw");
    auto hid = read_tensor_f32(base + ".hid");
    require(raw.shape.size() == 2 && hid.shape.size() == 2, "ShapeMismatch",
            "text feature files must hold 2-D matrices");
    require(raw.shape == hid.shape, "ShapeMismatch",
            "raw " + shape_str(raw.shape) + " vs hidden " + shape_str(hid.shape));
    std::vector<S> rv(raw.data.begin(), raw.data.end());
    std::vector<S> hv(hid.data.begin(), hid.data.end());
    TextFeatures<S> f{Tensor<S>::from(raw.shape, std::move(rv)),
                      Tensor<S>::from(hid.shape, std::move(hv))};
    check_text_features(f);
    return f;
}

}  // namespace wavefm
