#pragma once

// Driver-attention module: saliency prediction with domain-adaptive batch
// normalization, 15x15 Gaussian smoothing, the KLD/CC/SIM metric suite, and
// the multiplicative attention mask applied to the front camera image.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "m2da/config.hpp"
#include "m2da/tensor.hpp"

namespace m2da {

struct SaliencyMap {
    Tensor values;  // [H, W], nonnegative
    bool normalized = false;

    std::size_t height() const { return values.dim(0); }
    std::size_t width() const { return values.dim(1); }
};

// Normalize to sum 1; an all-zero map becomes uniform.
inline SaliencyMap normalize_saliency(const SaliencyMap& s, Tape* tape = nullptr) {
    Tensor total = sum(s.values, tape);
    if (total.item() <= 0.0) {
        return {Tensor::full(s.values.shape(), 1.0 / static_cast<double>(s.values.size())), true};
    }
    return {div_scalar_t(s.values, total, tape), true};
}

// Per-town affine parameters for DABN; one pair per registered domain.
struct DomainParams {
    int town = 0;
    Tensor alpha;  // [C]
    Tensor beta;   // [C]
};

// DABN (per-input statistics over all C*H*W entries, per-channel affine).
inline Tensor dabn(const Tensor& features, const DomainParams& dom, double eps = 1e-5,
                   Tape* tape = nullptr) {
    if (features.rank() != 3) throw std::invalid_argument("dabn: [C,H,W] input required");
    if (dom.alpha.size() != features.dim(0) || dom.beta.size() != features.dim(0))
        throw std::invalid_argument("dabn: alpha/beta channel mismatch");
    if (eps <= 0.0) throw std::invalid_argument("dabn: eps must be positive");
    Tensor mu = mean(features, tape);
    Tensor centered = sub_scalar_t(features, mu, tape);
    Tensor var = mean(mul(centered, centered, tape), tape);
    Tensor sigma = sqrt_op(add_scalar(var, eps, tape), tape);
    Tensor norm = div_scalar_t(centered, sigma, tape);
    // channel-wise affine: out[c] = alpha[c] * norm[c] + beta[c]
    std::size_t c = features.dim(0), hw = features.dim(1) * features.dim(2);
    Tensor out = Tensor::zeros(features.shape());
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t p = 0; p < hw; ++p)
            out.data()[ci * hw + p] = dom.alpha.at(ci) * norm.data()[ci * hw + p] + dom.beta.at(ci);
    if (tape) {
        Tensor cn = norm, ca = dom.alpha, cb = dom.beta, co = out;
        tape->record({norm, dom.alpha, dom.beta}, out, [cn, ca, cb, co, c, hw]() mutable {
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t p = 0; p < hw; ++p) {
                    double g = co.grad()[ci * hw + p];
                    cn.grad()[ci * hw + p] += g * ca.at(ci);
                    ca.grad()[ci] += g * cn.at(ci * hw + p);
                    cb.grad()[ci] += g;
                }
        });
    }
    return out;
}

// Normalized 2D Gaussian kernel [k, k].
inline Tensor gaussian_kernel(std::size_t k, double sigma) {
    if (k % 2 == 0) throw std::invalid_argument("gaussian_kernel: odd size required");
    double c = (static_cast<double>(k) - 1.0) / 2.0;
    std::vector<double> v(k * k);
    double total = 0.0;
    for (std::size_t y = 0; y < k; ++y)
        for (std::size_t x = 0; x < k; ++x) {
            double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
            double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            v[y * k + x] = w;
            total += w;
        }
    for (auto& w : v) w /= total;
    return Tensor({k, k}, std::move(v));
}

// Convolution with a normalized symmetric kernel under reflective padding;
// total mass and nonnegativity are preserved.
inline SaliencyMap gaussian_smooth(const SaliencyMap& map, std::size_t kernel_size = 15,
                                   double sigma = 0.0, Tape* tape = nullptr) {
    if (sigma <= 0.0) sigma = static_cast<double>(kernel_size) / 6.0;
    std::size_t r = kernel_size / 2;
    Tensor kernel = gaussian_kernel(kernel_size, sigma);
    Tensor padded = pad_symmetric(map.values, r, tape);
    Tensor x = reshape(padded, {1, padded.dim(0), padded.dim(1)}, tape);
    Tensor w = reshape(kernel, {1, 1, kernel_size, kernel_size});
    Tensor out = conv2d(x, w, Tensor::zeros({1}), 1, 0, tape);
    return {reshape(out, {map.height(), map.width()}, tape), map.normalized};
}

// ---------------------------------------------------------------------------
// Saliency comparison metrics
// ---------------------------------------------------------------------------

// sum_i S(i) * log(eps + S(i) / (eps + S*(i)))
inline Tensor kld(const Tensor& s, const Tensor& s_star, double eps = 1e-7, Tape* tape = nullptr) {
    detail::check_same_shape(s, s_star, "kld");
    Tensor ratio = div(s, add_scalar(s_star, eps, tape), tape);
    return sum(mul(s, log_op(add_scalar(ratio, eps, tape), tape), tape), tape);
}

// Pearson correlation; throws on constant input.
inline Tensor cc(const Tensor& s, const Tensor& s_star, Tape* tape = nullptr) {
    detail::check_same_shape(s, s_star, "cc");
    Tensor ds = sub_scalar_t(s, mean(s, tape), tape);
    Tensor dt = sub_scalar_t(s_star, mean(s_star, tape), tape);
    Tensor cov = mean(mul(ds, dt, tape), tape);
    Tensor var_s = mean(mul(ds, ds, tape), tape);
    Tensor var_t = mean(mul(dt, dt, tape), tape);
    if (var_s.item() <= 0.0 || var_t.item() <= 0.0)
        throw std::domain_error("cc: undefined correlation for constant map");
    return div_scalar_t(cov, mul(sqrt_op(var_s, tape), sqrt_op(var_t, tape), tape), tape);
}

// sum_i min(S(i), S*(i))
inline Tensor sim(const Tensor& s, const Tensor& s_star, Tape* tape = nullptr) {
    detail::check_same_shape(s, s_star, "sim");
    return sum(min_op(s, s_star, tape), tape);
}

// lambda_kld * KLD - lambda_cc * CC - lambda_sim * SIM
inline Tensor da_loss(const Tensor& s, const Tensor& s_star, const Config& cfg = Config{},
                      Tape* tape = nullptr) {
    Tensor l = scale(kld(s, s_star, cfg.da_eps, tape), cfg.lambda_kld, tape);
    l = sub(l, scale(cc(s, s_star, tape), cfg.lambda_cc, tape), tape);
    l = sub(l, scale(sim(s, s_star, tape), cfg.lambda_sim, tape), tape);
    return l;
}

// out = front ⊙ (1 + S / max(S)) per channel; all-zero saliency is identity.
inline Tensor apply_attention_mask(const Tensor& front, const SaliencyMap& s) {
    if (front.rank() != 3 || front.dim(1) != s.height() || front.dim(2) != s.width())
        throw std::invalid_argument("apply_attention_mask: shape mismatch");
    double mx = 0.0;
    for (std::size_t i = 0; i < s.values.size(); ++i) mx = std::max(mx, s.values.at(i));
    if (mx <= 0.0) return front;
    std::size_t c = front.dim(0), hw = s.values.size();
    Tensor out = Tensor::zeros(front.shape());
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t p = 0; p < hw; ++p)
            out.data()[ci * hw + p] = front.data()[ci * hw + p] * (1.0 + s.values.at(p) / mx);
    return out;
}

// ---------------------------------------------------------------------------
// Fixture IO: H x W little-endian f32 rasters plus a CSV manifest of
// (predicted, ground-truth, expected KLD/CC/SIM) regression rows.
// ---------------------------------------------------------------------------

inline void save_raster_f32(const Tensor& map, const std::string& path) {
    if (map.rank() != 2) throw std::invalid_argument("save_raster_f32: 2D map required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_raster_f32: cannot open " + path);
    for (std::size_t i = 0; i < map.size(); ++i) {
        float f = static_cast<float>(map.at(i));
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
}

inline Tensor load_raster_f32(const std::string& path, std::size_t h, std::size_t w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_raster_f32: cannot open " + path);
    std::vector<double> v(h * w);
    for (auto& x : v) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        if (!in) throw std::runtime_error("load_raster_f32: truncated " + path);
        x = f;
    }
    return Tensor({h, w}, std::move(v));
}

struct FixturePair {
    std::string predicted_path;
    std::string ground_truth_path;
    double expected_kld = 0.0;
    double expected_cc = 0.0;
    double expected_sim = 0.0;
};

inline void save_fixture_manifest(const std::vector<FixturePair>& pairs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_fixture_manifest: cannot open " + path);
    out << "predicted,ground_truth,kld,cc,sim\n";
    out.precision(17);
    for (const auto& p : pairs)
        out << p.predicted_path << "," << p.ground_truth_path << "," << p.expected_kld << ","
            << p.expected_cc << "," << p.expected_sim << "\n";
}

inline std::vector<FixturePair> load_fixture_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_fixture_manifest: cannot open " + path);
    std::vector<FixturePair> pairs;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        FixturePair p;
        std::size_t pos = 0;
        auto next = [&]() {
            auto comma = line.find(',', pos);
            std::string tok = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
            pos = comma == std::string::npos ? line.size() : comma + 1;
            return tok;
        };
        p.predicted_path = next();
        p.ground_truth_path = next();
        p.expected_kld = std::stod(next());
        p.expected_cc = std::stod(next());
        p.expected_sim = std::stod(next());
        pairs.push_back(p);
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Toy saliency predictor: 3 stride-2 conv blocks with DABN, spatial
// self-attention, a per-pixel GRU cell carrying state across frames, a
// decoder self-attention, nearest-neighbor upsampling, an additive centered
// Gaussian prior, and 15x15 smoothing. Output normalized to sum 1.
// ---------------------------------------------------------------------------

class SaliencyPredictor {
public:
    explicit SaliencyPredictor(std::size_t image_size, const Config& cfg, Rng& rng)
        : cfg_(cfg), image_size_(image_size) {
        // channel plan: 3 -> 8 -> 12 -> 16, spatial /8
        conv_w_ = {rng.normal_tensor({8, 3, 3, 3}, 0.1), rng.normal_tensor({12, 8, 3, 3}, 0.1),
                   rng.normal_tensor({16, 12, 3, 3}, 0.1)};
        conv_b_ = {Tensor::zeros({8}), Tensor::zeros({12}), Tensor::zeros({16})};
        enc_qkv_ = rng.normal_tensor({16, 16}, 0.1);
        gru_wz_ = rng.normal_tensor({16, 16}, 0.1);
        gru_uz_ = rng.normal_tensor({16, 16}, 0.1);
        gru_bz_ = Tensor::zeros({16});
        gru_wr_ = rng.normal_tensor({16, 16}, 0.1);
        gru_ur_ = rng.normal_tensor({16, 16}, 0.1);
        gru_br_ = Tensor::zeros({16});
        gru_wh_ = rng.normal_tensor({16, 16}, 0.1);
        gru_uh_ = rng.normal_tensor({16, 16}, 0.1);
        gru_bh_ = Tensor::zeros({16});
        dec_qkv_ = rng.normal_tensor({16, 16}, 0.1);
        head_w_ = rng.normal_tensor({16, 1}, 0.1);
        head_b_ = Tensor::zeros({1});
    }

    // Per-domain parameters: DABN affine per block, prior/smoothing sigmas.
    void register_domain(int town, double prior_sigma_frac = 0.25, double smooth_sigma = 2.5) {
        Domain d;
        d.prior_sigma_frac = prior_sigma_frac;
        d.smooth_sigma = smooth_sigma;
        std::size_t channels[3] = {8, 12, 16};
        for (int b = 0; b < 3; ++b) {
            d.dabn[b].town = town;
            d.dabn[b].alpha = Tensor::ones({channels[b]});
            d.dabn[b].beta = Tensor::zeros({channels[b]});
        }
        domains_[town] = d;
    }

    bool has_domain(int town) const { return domains_.count(town) != 0; }

    void reset_stream() { gru_state_ = Tensor(); }

    void zero_head() {
        head_w_ = Tensor::zeros(head_w_.shape());
        head_b_ = Tensor::zeros(head_b_.shape());
    }

    SaliencyMap predict(const Tensor& front, int town, Tape* tape = nullptr) {
        if (front.rank() != 3 || front.dim(1) != image_size_ || front.dim(2) != image_size_)
            throw std::invalid_argument("SaliencyPredictor: unexpected input resolution");
        auto it = domains_.find(town);
        if (it == domains_.end())
            throw std::domain_error("SaliencyPredictor: unregistered domain " + std::to_string(town));
        const Domain& dom = it->second;

        Tensor x = front;
        for (int b = 0; b < 3; ++b) {
            x = conv2d(x, conv_w_[b], conv_b_[b], 2, 1, tape);
            x = dabn(x, dom.dabn[b], cfg_.dabn_eps, tape);
            x = relu(x, tape);
        }
        std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);

        // encoder self-attention over spatial tokens
        Tensor tok = tokens_from_chw(x, tape);  // [hw, c]
        Tensor proj = matmul(tok, enc_qkv_, tape);
        tok = add(tok, scaled_dot_attention(proj, proj, tok, c, tape), tape);

        // single-step GRU, state carried across frames of a stream
        if (gru_state_.size() != tok.size()) gru_state_ = Tensor::zeros(tok.shape());
        Tensor hp = gru_state_;
        Tensor z = sigmoid(add_rowvec(add(matmul(tok, gru_wz_, tape), matmul(hp, gru_uz_, tape), tape), gru_bz_, tape), tape);
        Tensor r = sigmoid(add_rowvec(add(matmul(tok, gru_wr_, tape), matmul(hp, gru_ur_, tape), tape), gru_br_, tape), tape);
        Tensor hh = tanh_op(add_rowvec(add(matmul(tok, gru_wh_, tape), matmul(mul(r, hp, tape), gru_uh_, tape), tape), gru_bh_, tape), tape);
        Tensor one_minus_z = add_scalar(scale(z, -1.0, tape), 1.0, tape);
        Tensor hn = add(mul(one_minus_z, hp, tape), mul(z, hh, tape), tape);
        gru_state_ = Tensor(hn.shape(), hn.values());  // detached copy across frames

        // decoder self-attention + linear head to a 1-channel map
        Tensor dproj = matmul(hn, dec_qkv_, tape);
        Tensor dec = add(hn, scaled_dot_attention(dproj, dproj, hn, c, tape), tape);
        Tensor logit = add_rowvec(matmul(dec, head_w_, tape), head_b_, tape);  // [hw, 1]
        Tensor coarse = reshape(logit, {1, h, w}, tape);

        // sigmoid keeps the map positive without a dead region (a relu here
        // collapses to the uniform map whenever every logit is negative)
        Tensor up = upsample_nearest(coarse, image_size_, image_size_, tape);
        Tensor prior = domain_prior(dom);
        Tensor raw = add(sigmoid(reshape(up, {image_size_, image_size_}, tape), tape), prior, tape);
        SaliencyMap smoothed = gaussian_smooth({raw, false}, cfg_.da_kernel, dom.smooth_sigma, tape);
        return normalize_saliency(smoothed, tape);
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> ps = {enc_qkv_, gru_wz_, gru_uz_, gru_bz_, gru_wr_, gru_ur_, gru_br_,
                                  gru_wh_, gru_uh_, gru_bh_, dec_qkv_, head_w_, head_b_};
        for (auto& w : conv_w_) ps.push_back(w);
        for (auto& b : conv_b_) ps.push_back(b);
        for (auto& [town, d] : domains_)
            for (auto& bn : d.dabn) {
                ps.push_back(bn.alpha);
                ps.push_back(bn.beta);
            }
        return ps;
    }

private:
    struct Domain {
        DomainParams dabn[3];
        double prior_sigma_frac = 0.25;
        double smooth_sigma = 2.5;
    };

    Tensor domain_prior(const Domain& dom) const {
        double sigma = dom.prior_sigma_frac * static_cast<double>(image_size_);
        double c = (static_cast<double>(image_size_) - 1.0) / 2.0;
        std::vector<double> v(image_size_ * image_size_);
        double total = 0.0;
        for (std::size_t y = 0; y < image_size_; ++y)
            for (std::size_t x = 0; x < image_size_; ++x) {
                double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
                double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                v[y * image_size_ + x] = w;
                total += w;
            }
        for (auto& w : v) w /= total;
        return Tensor({image_size_, image_size_}, std::move(v));
    }

    Config cfg_;
    std::size_t image_size_;
    std::vector<Tensor> conv_w_, conv_b_;
    Tensor enc_qkv_, dec_qkv_, head_w_, head_b_;
    Tensor gru_wz_, gru_uz_, gru_bz_, gru_wr_, gru_ur_, gru_br_, gru_wh_, gru_uh_, gru_bh_;
    Tensor gru_state_;
    std::map<int, Domain> domains_;
};

}  // namespace m2da
