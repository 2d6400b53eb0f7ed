#pragma once

// The full driving model: per-modality convolutional encoders, the driver
// attention mask, LVAFusion, transformer encoder/decoder, and the three
// prediction heads. Also the named-tensor checkpoint format.

#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "m2da/bev.hpp"
#include "m2da/config.hpp"
#include "m2da/dataset.hpp"
#include "m2da/decoder.hpp"
#include "m2da/fusion.hpp"
#include "m2da/saliency.hpp"

namespace m2da {

// Three stride-2 conv blocks (input size 64 -> 8) followed by optional
// average pooling to the token grid and a 1x1 projection to the token width.
struct ConvEncoder {
    std::vector<Tensor> w, b;  // three 3x3 conv layers
    Tensor proj_w, proj_b;     // 1x1 projection to model_dim
    std::size_t pool = 1;      // 8 / model_spatial

    static ConvEncoder init(std::size_t cin, const Config& cfg, Rng& rng) {
        ConvEncoder e;
        std::size_t plan[4] = {cin, 8, 16, 32};
        for (int i = 0; i < 3; ++i) {
            double stdev = 1.0 / std::sqrt(static_cast<double>(plan[i] * 9));
            e.w.push_back(rng.normal_tensor({plan[i + 1], plan[i], 3, 3}, stdev));
            e.b.push_back(Tensor::zeros({plan[i + 1]}));
        }
        if (cfg.model_spatial == 0 || 8 % cfg.model_spatial != 0)
            throw std::invalid_argument("ConvEncoder: model_spatial must divide 8");
        e.pool = 8 / cfg.model_spatial;
        e.proj_w = rng.normal_tensor({cfg.model_dim, 32, 1, 1}, 1.0 / std::sqrt(32.0));
        e.proj_b = Tensor::zeros({cfg.model_dim});
        return e;
    }

    Tensor forward(const Tensor& x, Tape* tape = nullptr) const {
        Tensor h = x;
        for (int i = 0; i < 3; ++i) h = relu(conv2d(h, w[i], b[i], 2, 1, tape), tape);
        if (pool > 1) h = avg_pool2d(h, pool, tape);
        return conv2d(h, proj_w, proj_b, 1, 0, tape);  // [D, s, s]
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> ps;
        for (int i = 0; i < 3; ++i) {
            ps.push_back(w[i]);
            ps.push_back(b[i]);
        }
        ps.push_back(proj_w);
        ps.push_back(proj_b);
        return ps;
    }
};

struct ModelInput {
    Tensor left, front, right;  // [3, n, n] raw camera rasters
    Tensor bev;                 // [1, N, N] rasterized lidar
    double target_x = 0.0, target_y = 0.0;
    int town = 0;
};

// Frozen per-record tensors that never change during driving training: the
// saliency map, the attention-masked front image, and the pooled BEV input.
struct PreparedInput {
    Tensor left, masked_front, right;
    Tensor saliency;  // [1, n, n]; empty when the DA mask is disabled
    Tensor bev64;     // [1, 64, 64]
    double target_x = 0.0, target_y = 0.0;
};

struct ModelOutput {
    Tensor waypoints;  // [T, 2]
    Tensor heatmap;    // [S, S, 7]
    Tensor traffic;    // [1, 3]
};

class M2DAModel {
public:
    explicit M2DAModel(const Config& cfg, std::uint64_t seed = 7)
        : cfg_(cfg) {
        Rng rng(seed);
        da_ = std::make_unique<SaliencyPredictor>(cfg.sim_image_size, cfg, rng);
        for (int town = 1; town <= 4; ++town) da_->register_domain(town);
        enc_image_ = ConvEncoder::init(3, cfg, rng);
        enc_attention_ = ConvEncoder::init(1, cfg, rng);
        enc_lidar_ = ConvEncoder::init(1, cfg, rng);
        emb_ = FusionEmbeddings::init(cfg.model_dim, rng);
        dec_ = DecoderParams::init(cfg, rng);
    }

    const Config& config() const { return cfg_; }
    SaliencyPredictor& attention_predictor() { return *da_; }

    // The saliency prediction and the BEV pooling are not differentiated
    // through during driving training; fold them into the record's inputs.
    PreparedInput prepare(const ModelInput& in) const {
        PreparedInput p;
        p.left = in.left;
        p.right = in.right;
        p.target_x = in.target_x;
        p.target_y = in.target_y;
        if (cfg_.model_use_da_mask) {
            da_->reset_stream();
            SaliencyMap s = da_->predict(in.front, in.town);
            p.masked_front = apply_attention_mask(in.front, s);
            p.saliency = reshape(s.values, {1, s.values.dim(0), s.values.dim(1)});
        } else {
            p.masked_front = in.front;
        }
        std::size_t n = in.bev.dim(1);
        p.bev64 = n > 64 ? avg_pool2d(in.bev, n / 64) : in.bev;
        return p;
    }

    ModelInput input_from_record(const ExpertRecord& r) const {
        ModelInput in;
        in.left = r.left;
        in.front = r.front;
        in.right = r.right;
        BevGrid grid = rasterize(r.cloud, cfg_);
        in.bev = bev_to_tensor(grid, cfg_.bev_log1p);
        in.target_x = r.target_x;
        in.target_y = r.target_y;
        in.town = r.town;
        return in;
    }

    ModelOutput forward(const PreparedInput& p, bool training = false,
                        Rng* dropout_rng = nullptr, Tape* tape = nullptr) {
        Tensor fa = enc_image_.forward(p.masked_front, tape);
        if (cfg_.model_use_da_mask && p.saliency.size() > 0)
            fa = add(fa, enc_attention_.forward(p.saliency, tape), tape);
        std::vector<ModalityFeature> feats = {
            {Modality::Left, enc_image_.forward(p.left, tape)},
            {Modality::FrontAttention, fa},
            {Modality::Right, enc_image_.forward(p.right, tape)},
            {Modality::Lidar, enc_lidar_.forward(p.bev64, tape)},
        };

        TokenSequence fused;
        if (cfg_.model_use_fusion) {
            fused = lvafuse(feats, emb_, cfg_, tape);
        } else {
            // concatenation baseline: modality tokens go straight to the encoder
            std::vector<TokenSequence> seqs;
            for (const auto& f : feats) seqs.push_back(build_tokens(f, emb_, tape));
            fused = concat_modalities(seqs, tape);
        }

        TokenSequence memory = encode(fused, dec_, cfg_, training, dropout_rng, tape);
        Tensor z = decode(memory, dec_, cfg_, tape);
        std::size_t t = cfg_.waypoint_count, s2 = cfg_.heatmap_size * cfg_.heatmap_size;
        ModelOutput out;
        out.waypoints = waypoint_head(slice_rows(z, 0, t, tape), p.target_x, p.target_y, dec_, tape);
        out.heatmap = heatmap_head(slice_rows(z, t, t + s2, tape), dec_, cfg_, tape);
        out.traffic = traffic_head(slice_rows(z, t + s2, t + s2 + 1, tape), dec_, tape);
        return out;
    }

    ModelOutput forward(const ModelInput& in, bool training = false, Rng* dropout_rng = nullptr,
                        Tape* tape = nullptr) {
        return forward(prepare(in), training, dropout_rng, tape);
    }

    // Trainable parameters of the driving path (the DA predictor is trained
    // separately and stays frozen here).
    std::vector<Tensor> parameters() {
        std::vector<Tensor> ps;
        auto push = [&](std::vector<Tensor> v) { ps.insert(ps.end(), v.begin(), v.end()); };
        push(enc_image_.parameters());
        push(enc_attention_.parameters());
        push(enc_lidar_.parameters());
        push(emb_.parameters());
        push(dec_.parameters());
        return ps;
    }

    std::vector<Tensor> fusion_parameters() { return emb_.parameters(); }

    std::vector<std::pair<std::string, Tensor>> named_parameters() {
        std::vector<std::pair<std::string, Tensor>> out;
        auto push = [&](const std::string& prefix, std::vector<Tensor> v) {
            for (std::size_t i = 0; i < v.size(); ++i)
                out.emplace_back(prefix + "." + std::to_string(i), v[i]);
        };
        push("enc_image", enc_image_.parameters());
        push("enc_attention", enc_attention_.parameters());
        push("enc_lidar", enc_lidar_.parameters());
        push("fusion", emb_.parameters());
        push("decoder", dec_.parameters());
        push("da", da_->parameters());
        return out;
    }

    void save_checkpoint(const std::string& path);
    static M2DAModel load_checkpoint(const std::string& path);

private:
    Config cfg_;
    std::unique_ptr<SaliencyPredictor> da_;
    ConvEncoder enc_image_, enc_attention_, enc_lidar_;
    FusionEmbeddings emb_;
    DecoderParams dec_;
};

// --- Checkpoint: versioned flat archive of named tensors ----------------------
// Layout (little endian): magic "M2DACKPT", u32 version, u32 entry count, then
// per entry: u32 name length, name bytes, u32 rank, u32 dims..., f64 payload.
// Config values are stored as scalar entries under "config/<key>" so a model
// can be reconstructed from the file alone.

namespace detail {

inline void ckpt_put_entry(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) put_u32(os, static_cast<std::uint32_t>(t.dim(d)));
    for (double v : t.values()) put_f64(os, v);
}

inline std::pair<std::string, Tensor> ckpt_get_entry(std::istream& is) {
    std::uint32_t len = get_u32(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    std::uint32_t rank = get_u32(is);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(get_u32(is));
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.values()) v = get_f64(is);
    return {name, t};
}

}  // namespace detail

inline void M2DAModel::save_checkpoint(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write("M2DACKPT", 8);
    detail::put_u32(os, 1);  // version
    auto named = named_parameters();
    auto keys = cfg_.keys();
    detail::put_u32(os, static_cast<std::uint32_t>(named.size() + keys.size()));
    for (const auto& k : keys) {
        std::string s = cfg_.get(k);
        double v = s == "true" ? 1.0 : (s == "false" ? 0.0 : std::stod(s));
        detail::ckpt_put_entry(os, "config/" + k, Tensor::scalar(v));
    }
    for (const auto& [name, t] : named) detail::ckpt_put_entry(os, name, t);
}

inline M2DAModel M2DAModel::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::string(magic, 8) != "M2DACKPT") throw std::runtime_error("load_checkpoint: bad magic");
    std::uint32_t version = detail::get_u32(is);
    if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
    std::uint32_t n = detail::get_u32(is);
    std::map<std::string, Tensor> entries;
    for (std::uint32_t i = 0; i < n; ++i) {
        auto [name, t] = detail::ckpt_get_entry(is);
        if (!is) throw std::runtime_error("load_checkpoint: truncated file");
        entries.emplace(std::move(name), std::move(t));
    }

    Config cfg;
    for (const auto& k : cfg.keys()) {
        auto it = entries.find("config/" + k);
        if (it == entries.end()) continue;
        std::ostringstream ss;
        ss << std::setprecision(17) << it->second.item();
        cfg.set(k, ss.str());
    }
    M2DAModel model(cfg);
    for (auto& [name, t] : model.named_parameters()) {
        auto it = entries.find(name);
        if (it == entries.end())
            throw std::runtime_error("load_checkpoint: missing tensor " + name);
        if (it->second.shape() != t.shape())
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        std::copy(it->second.values().begin(), it->second.values().end(), t.values().begin());
    }
    return model;
}

}  // namespace m2da
