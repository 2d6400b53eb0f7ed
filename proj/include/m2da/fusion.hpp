#pragma once

// LVAFusion: local+global modality tokens, fixed-order concatenation, then
// sequential lidar and image cross-attention with post-add layer norm.
// Queries are always derived from modality features; there is deliberately
// no constructor that builds a token sequence from random values.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "m2da/config.hpp"
#include "m2da/tensor.hpp"

namespace m2da {

enum class Modality { Left, FrontAttention, Right, Lidar };

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Left: return "left";
        case Modality::FrontAttention: return "front_attention";
        case Modality::Right: return "right";
        case Modality::Lidar: return "lidar";
    }
    return "?";
}

enum class SensorClass { Camera, Lidar };

inline SensorClass sensor_class_of(Modality m) {
    return m == Modality::Lidar ? SensorClass::Lidar : SensorClass::Camera;
}

struct ModalityFeature {
    Modality tag = Modality::Left;
    Tensor feature;  // [d, H', W']
};

struct TokenSequence {
    Tensor tokens;  // [N, D_f]
    std::vector<Modality> tags;        // per token
    std::vector<bool> global_flags;    // per token

    std::size_t count() const { return tokens.dim(0); }
    std::size_t dim() const { return tokens.dim(1); }
};

// Fixed 2D sinusoidal positional encoding table [H*W, D]: the first half of
// the channels encodes the column index, the second half the row index.
inline Tensor sinusoidal_pe_2d(std::size_t h, std::size_t w, std::size_t d) {
    if (d % 2 != 0) throw std::invalid_argument("sinusoidal_pe_2d: channel count must be even");
    Tensor pe = Tensor::zeros({h * w, d});
    std::size_t half = d / 2;
    auto fill = [&](std::size_t offset, std::size_t span, auto coord) {
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double pos = coord(y, x);
                for (std::size_t i = 0; 2 * i + 1 < span; ++i) {
                    double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                                        static_cast<double>(span));
                    pe.data()[(y * w + x) * d + offset + 2 * i] = std::sin(pos * freq);
                    pe.data()[(y * w + x) * d + offset + 2 * i + 1] = std::cos(pos * freq);
                }
            }
    };
    fill(0, half, [](std::size_t, std::size_t x) { return static_cast<double>(x); });
    fill(half, d - half, [](std::size_t y, std::size_t) { return static_cast<double>(y); });
    return pe;
}

// Learnable view embedding per modality, sensor embedding per sensor class,
// and layer-norm affines for the two cross-attention stages (plus the
// optional trailing self-attention block).
struct FusionEmbeddings {
    std::map<Modality, Tensor> view;       // zeta, [D]
    std::map<SensorClass, Tensor> sensor;  // vartheta, [D]
    Tensor ln_lidar_gain, ln_lidar_bias;
    Tensor ln_image_gain, ln_image_bias;
    Tensor ln_self_gain, ln_self_bias;

    static FusionEmbeddings init(std::size_t d, Rng& rng) {
        FusionEmbeddings e;
        for (Modality m : {Modality::Left, Modality::FrontAttention, Modality::Right, Modality::Lidar})
            e.view[m] = rng.normal_tensor({d}, 0.02);
        e.sensor[SensorClass::Camera] = rng.normal_tensor({d}, 0.02);
        e.sensor[SensorClass::Lidar] = rng.normal_tensor({d}, 0.02);
        e.ln_lidar_gain = Tensor::ones({d});
        e.ln_lidar_bias = Tensor::zeros({d});
        e.ln_image_gain = Tensor::ones({d});
        e.ln_image_bias = Tensor::zeros({d});
        e.ln_self_gain = Tensor::ones({d});
        e.ln_self_bias = Tensor::zeros({d});
        return e;
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> ps;
        for (auto& [m, t] : view) ps.push_back(t);
        for (auto& [s, t] : sensor) ps.push_back(t);
        for (Tensor* t : {&ln_lidar_gain, &ln_lidar_bias, &ln_image_gain, &ln_image_bias,
                          &ln_self_gain, &ln_self_bias})
            ps.push_back(*t);
        return ps;
    }
};

// Local tokens = flattened spatial features + PE + zeta; the global token
// (pooled feature + sensor embedding + zeta) is appended last.
inline TokenSequence build_tokens(const ModalityFeature& f, const FusionEmbeddings& emb,
                                  Tape* tape = nullptr) {
    auto vit = emb.view.find(f.tag);
    if (vit == emb.view.end())
        throw std::invalid_argument(std::string("build_tokens: unknown modality ") + modality_name(f.tag));
    const Tensor& zeta = vit->second;
    const Tensor& vartheta = emb.sensor.at(sensor_class_of(f.tag));
    std::size_t d = f.feature.dim(0), h = f.feature.dim(1), w = f.feature.dim(2);
    if (zeta.size() != d) throw std::invalid_argument("build_tokens: token dimension mismatch");

    Tensor local = tokens_from_chw(f.feature, tape);                 // [hw, d]
    local = add(local, sinusoidal_pe_2d(h, w, d), tape);
    local = add_rowvec(local, zeta, tape);

    Tensor pooled = reshape(global_avg_pool(f.feature, tape), {1, d}, tape);
    Tensor global = add_rowvec(add_rowvec(pooled, vartheta, tape), zeta, tape);

    TokenSequence seq;
    seq.tokens = concat_rows({local, global}, tape);
    seq.tags.assign(h * w + 1, f.tag);
    seq.global_flags.assign(h * w + 1, false);
    seq.global_flags.back() = true;
    return seq;
}

// Order-preserving concatenation in the fixed order
// (left, front_attention, right, lidar).
inline TokenSequence concat_modalities(const std::vector<TokenSequence>& seqs,
                                       Tape* tape = nullptr) {
    static const Modality order[4] = {Modality::Left, Modality::FrontAttention, Modality::Right,
                                      Modality::Lidar};
    if (seqs.size() != 4) throw std::invalid_argument("concat_modalities: 4 sequences required");
    std::vector<Tensor> parts;
    TokenSequence out;
    for (std::size_t i = 0; i < 4; ++i) {
        if (seqs[i].count() == 0)
            throw std::invalid_argument("concat_modalities: empty modality sequence");
        if (seqs[i].tags.front() != order[i])
            throw std::invalid_argument("concat_modalities: modality order violated");
        if (seqs[i].dim() != seqs[0].dim())
            throw std::invalid_argument("concat_modalities: token dimension mismatch");
        parts.push_back(seqs[i].tokens);
        out.tags.insert(out.tags.end(), seqs[i].tags.begin(), seqs[i].tags.end());
        out.global_flags.insert(out.global_flags.end(), seqs[i].global_flags.begin(),
                                seqs[i].global_flags.end());
    }
    out.tokens = concat_rows(parts, tape);
    return out;
}

namespace detail {

inline TokenSequence residual_cross_attention(const TokenSequence& query_seq, const Tensor& kv,
                                              std::size_t scale_dim, const Tensor& ln_gain,
                                              const Tensor& ln_bias, double eps, Tape* tape) {
    if (kv.dim(0) == 0) throw std::invalid_argument("cross_attention: empty key sequence");
    Tensor attended = scaled_dot_attention(query_seq.tokens, kv, kv, scale_dim, tape);
    Tensor fused = layer_norm(add(query_seq.tokens, attended, tape), ln_gain, ln_bias, eps, tape);
    TokenSequence out = query_seq;
    out.tokens = fused;
    return out;
}

}  // namespace detail

// K_inter = LN(K_concat + softmax(K_concat K_lidar^T / sqrt(D_l)) K_lidar)
inline TokenSequence lidar_cross_attention(const TokenSequence& concat, const TokenSequence& lidar,
                                           const FusionEmbeddings& emb, double ln_eps = 1e-5,
                                           Tape* tape = nullptr) {
    return detail::residual_cross_attention(concat, lidar.tokens, lidar.dim(), emb.ln_lidar_gain,
                                            emb.ln_lidar_bias, ln_eps, tape);
}

// K_fused = LN(K_inter + softmax(K_inter K_image^T / sqrt(D_i)) K_image)
inline TokenSequence image_cross_attention(const TokenSequence& inter, const TokenSequence& images,
                                           const FusionEmbeddings& emb, double ln_eps = 1e-5,
                                           Tape* tape = nullptr) {
    return detail::residual_cross_attention(inter, images.tokens, images.dim(), emb.ln_image_gain,
                                            emb.ln_image_bias, ln_eps, tape);
}

// Full fusion pipeline: build tokens per modality, concatenate, lidar then
// image cross-attention, optional trailing self-attention block.
inline TokenSequence lvafuse(const std::vector<ModalityFeature>& features,
                             const FusionEmbeddings& emb, const Config& cfg = Config{},
                             Tape* tape = nullptr) {
    if (features.size() != 4) throw std::invalid_argument("lvafuse: 4 modality features required");
    std::vector<TokenSequence> seqs;
    for (const auto& f : features) seqs.push_back(build_tokens(f, emb, tape));
    TokenSequence concat = concat_modalities(seqs, tape);

    const TokenSequence& lidar = seqs[3];
    Tensor images = concat_rows({seqs[0].tokens, seqs[1].tokens, seqs[2].tokens}, tape);

    TokenSequence inter = detail::residual_cross_attention(
        concat, lidar.tokens, lidar.dim(), emb.ln_lidar_gain, emb.ln_lidar_bias,
        cfg.layer_norm_eps, tape);
    TokenSequence fused = detail::residual_cross_attention(
        inter, images, concat.dim(), emb.ln_image_gain, emb.ln_image_bias, cfg.layer_norm_eps,
        tape);

    if (cfg.model_fusion_self_attention) {
        fused = detail::residual_cross_attention(fused, fused.tokens, fused.dim(),
                                                 emb.ln_self_gain, emb.ln_self_bias,
                                                 cfg.layer_norm_eps, tape);
    }
    return fused;
}

}  // namespace m2da
