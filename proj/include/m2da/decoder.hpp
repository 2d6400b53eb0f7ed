#pragma once

// Transformer encoder over fused tokens, decoder with the three query
// families (10 waypoint + 400 perception + 1 traffic), and the waypoint /
// heatmap / traffic prediction heads.

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "m2da/config.hpp"
#include "m2da/fusion.hpp"
#include "m2da/tensor.hpp"

namespace m2da {

struct WaypointSequence {
    std::vector<std::array<double, 2>> points;  // ego BEV frame, meters

    std::size_t size() const { return points.size(); }
};

inline WaypointSequence to_waypoints(const Tensor& t) {
    if (t.rank() != 2 || t.dim(1) != 2) throw std::invalid_argument("to_waypoints: [T,2] required");
    WaypointSequence w;
    for (std::size_t i = 0; i < t.dim(0); ++i) w.points.push_back({t.at(i, 0), t.at(i, 1)});
    return w;
}

inline Tensor waypoints_to_tensor(const WaypointSequence& w) {
    std::vector<double> v;
    for (auto& p : w.points) {
        v.push_back(p[0]);
        v.push_back(p[1]);
    }
    return Tensor({w.size(), 2}, std::move(v));
}

// S x S x 7 perception heatmap. Channel order: existence probability, x
// offset, y offset, width, length, speed, yaw. Speed and yaw channels are
// stored normalized (speed / v_max, (yaw + pi) / 2 pi).
struct Heatmap {
    Tensor values;  // [S, S, 7]

    std::size_t side() const { return values.dim(0); }
    double at(std::size_t i, std::size_t j, std::size_t k) const { return values.at(i, j, k); }
};

struct TrafficState {
    double red_light = 0.0;
    double stop_sign = 0.0;
    double intersection = 0.0;
};

struct DetectedObject {
    double x = 0.0, y = 0.0;      // ego frame, meters
    double width = 0.0, length = 0.0;
    double speed = 0.0;           // m/s
    double yaw = 0.0;             // rad, ego frame, wrapped to (-pi, pi]
    double probability = 1.0;
};

inline double wrap_angle(double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a <= -M_PI) a += 2.0 * M_PI;
    return a;
}

// ---------------------------------------------------------------------------
// Heatmap grid geometry: S x S cells covering the BEV extent (x forward in
// rows from the far-front edge, y right in columns), matching the raster.
// ---------------------------------------------------------------------------

struct HeatmapGeometry {
    std::size_t side = 20;
    double extent_front = 28.0, extent_rear = 4.0, extent_side = 16.0;

    double cell_h() const { return (extent_front + extent_rear) / static_cast<double>(side); }
    double cell_w() const { return 2.0 * extent_side / static_cast<double>(side); }
    double center_x(std::size_t row) const { return extent_front - (static_cast<double>(row) + 0.5) * cell_h(); }
    double center_y(std::size_t col) const { return -extent_side + (static_cast<double>(col) + 0.5) * cell_w(); }

    // false if outside the covered area
    bool cell_of(double x, double y, std::size_t& row, std::size_t& col) const {
        double r = std::floor((extent_front - x) / cell_h());
        double c = std::floor((y + extent_side) / cell_w());
        if (r < 0 || r >= static_cast<double>(side) || c < 0 || c >= static_cast<double>(side))
            return false;
        row = static_cast<std::size_t>(r);
        col = static_cast<std::size_t>(c);
        return true;
    }

    static HeatmapGeometry from_config(const Config& cfg) {
        return {cfg.heatmap_size, cfg.bev_extent_front, cfg.bev_extent_rear, cfg.bev_extent_side};
    }
};

// Objects -> heatmap. One object per cell; when two map to the same cell the
// closer one to the ego wins.
inline Heatmap encode_objects(const std::vector<DetectedObject>& objects, const Config& cfg = Config{}) {
    HeatmapGeometry geo = HeatmapGeometry::from_config(cfg);
    std::size_t s = geo.side;
    Tensor m = Tensor::zeros({s, s, 7});
    std::vector<double> occupant_dist(s * s, 1e18);
    for (const auto& o : objects) {
        std::size_t r, c;
        if (!geo.cell_of(o.x, o.y, r, c)) continue;
        double dist = std::hypot(o.x, o.y);
        if (dist >= occupant_dist[r * s + c]) continue;
        occupant_dist[r * s + c] = dist;
        double* cell = m.data() + (r * s + c) * 7;
        cell[0] = 1.0;
        cell[1] = o.x - geo.center_x(r);
        cell[2] = o.y - geo.center_y(c);
        cell[3] = o.width;
        cell[4] = o.length;
        cell[5] = o.speed / cfg.speed_norm;
        cell[6] = (wrap_angle(o.yaw) + M_PI) / (2.0 * M_PI);
    }
    return {m};
}

// Heatmap -> objects: threshold channel 0, suppress 8-neighborhood duplicates
// keeping the max probability, then decode cell center + offsets.
inline std::vector<DetectedObject> decode_heatmap(const Heatmap& m, double threshold = 0.9,
                                                  const Config& cfg = Config{}) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw std::invalid_argument("decode_heatmap: threshold must be in (0,1)");
    HeatmapGeometry geo = HeatmapGeometry::from_config(cfg);
    std::size_t s = m.side();
    std::vector<DetectedObject> out;
    for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < s; ++c) {
            double p = m.at(r, c, 0);
            if (p <= threshold) continue;
            bool is_peak = true;
            for (int dr = -1; dr <= 1 && is_peak; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    std::ptrdiff_t nr = static_cast<std::ptrdiff_t>(r) + dr;
                    std::ptrdiff_t nc = static_cast<std::ptrdiff_t>(c) + dc;
                    if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(s) ||
                        nc >= static_cast<std::ptrdiff_t>(s))
                        continue;
                    double q = m.at(static_cast<std::size_t>(nr), static_cast<std::size_t>(nc), 0);
                    if (q > p || (q == p && (dr < 0 || (dr == 0 && dc < 0)))) {
                        is_peak = false;
                        break;
                    }
                }
            if (!is_peak) continue;
            DetectedObject o;
            o.probability = p;
            o.x = geo.center_x(r) + m.at(r, c, 1);
            o.y = geo.center_y(c) + m.at(r, c, 2);
            o.width = std::abs(m.at(r, c, 3));
            o.length = std::abs(m.at(r, c, 4));
            o.speed = m.at(r, c, 5) * cfg.speed_norm;
            o.yaw = wrap_angle(m.at(r, c, 6) * 2.0 * M_PI - M_PI);
            out.push_back(o);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct AttentionParams {
    Tensor wq, wk, wv, wo;  // [D, D]

    static AttentionParams init(std::size_t d, Rng& rng) {
        double s = 1.0 / std::sqrt(static_cast<double>(d));
        return {rng.normal_tensor({d, d}, s), rng.normal_tensor({d, d}, s),
                rng.normal_tensor({d, d}, s), rng.normal_tensor({d, d}, s)};
    }

    std::vector<Tensor> parameters() { return {wq, wk, wv, wo}; }
};

struct MlpParams {
    Tensor w1, b1, w2, b2;  // [D, H], [H], [H, D_out], [D_out]

    static MlpParams init(std::size_t d_in, std::size_t hidden, std::size_t d_out, Rng& rng) {
        return {rng.normal_tensor({d_in, hidden}, 1.0 / std::sqrt(static_cast<double>(d_in))),
                Tensor::zeros({hidden}),
                rng.normal_tensor({hidden, d_out}, 1.0 / std::sqrt(static_cast<double>(hidden))),
                Tensor::zeros({d_out})};
    }

    std::vector<Tensor> parameters() { return {w1, b1, w2, b2}; }
};

struct EncoderLayerParams {
    AttentionParams attn;
    MlpParams mlp;
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;

    static EncoderLayerParams init(std::size_t d, Rng& rng) {
        EncoderLayerParams p;
        p.attn = AttentionParams::init(d, rng);
        p.mlp = MlpParams::init(d, 2 * d, d, rng);
        p.ln1_gain = Tensor::ones({d});
        p.ln1_bias = Tensor::zeros({d});
        p.ln2_gain = Tensor::ones({d});
        p.ln2_bias = Tensor::zeros({d});
        return p;
    }

    std::vector<Tensor> parameters() {
        auto ps = attn.parameters();
        auto mp = mlp.parameters();
        ps.insert(ps.end(), mp.begin(), mp.end());
        for (Tensor* t : {&ln1_gain, &ln1_bias, &ln2_gain, &ln2_bias}) ps.push_back(*t);
        return ps;
    }
};

// Learned queries, seeded deterministically: 10 waypoint + 400 perception +
// 1 traffic = 411 rows.
struct QuerySet {
    Tensor waypoint;    // [T, D]
    Tensor perception;  // [S^2, D]
    Tensor traffic;     // [1, D]

    static QuerySet init(std::size_t d, const Config& cfg, Rng& rng) {
        return {rng.normal_tensor({cfg.waypoint_count, d}, 0.02),
                rng.normal_tensor({cfg.heatmap_size * cfg.heatmap_size, d}, 0.02),
                rng.normal_tensor({1, d}, 0.02)};
    }

    std::size_t total() const { return waypoint.dim(0) + perception.dim(0) + traffic.dim(0); }

    std::vector<Tensor> parameters() { return {waypoint, perception, traffic}; }
};

struct GruParams {
    Tensor wz, uz, bz, wr, ur, br, wh, uh, bh;

    static GruParams init(std::size_t d_in, std::size_t d_h, Rng& rng) {
        double si = 1.0 / std::sqrt(static_cast<double>(d_in));
        double sh = 1.0 / std::sqrt(static_cast<double>(d_h));
        GruParams p;
        p.wz = rng.normal_tensor({d_in, d_h}, si);
        p.uz = rng.normal_tensor({d_h, d_h}, sh);
        p.bz = Tensor::zeros({d_h});
        p.wr = rng.normal_tensor({d_in, d_h}, si);
        p.ur = rng.normal_tensor({d_h, d_h}, sh);
        p.br = Tensor::zeros({d_h});
        p.wh = rng.normal_tensor({d_in, d_h}, si);
        p.uh = rng.normal_tensor({d_h, d_h}, sh);
        p.bh = Tensor::zeros({d_h});
        return p;
    }

    std::vector<Tensor> parameters() { return {wz, uz, bz, wr, ur, br, wh, uh, bh}; }
};

inline Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p, Tape* tape = nullptr) {
    Tensor z = sigmoid(add_rowvec(add(matmul(x, p.wz, tape), matmul(h, p.uz, tape), tape), p.bz, tape), tape);
    Tensor r = sigmoid(add_rowvec(add(matmul(x, p.wr, tape), matmul(h, p.ur, tape), tape), p.br, tape), tape);
    Tensor hh = tanh_op(add_rowvec(add(matmul(x, p.wh, tape), matmul(mul(r, h, tape), p.uh, tape), tape), p.bh, tape), tape);
    Tensor omz = add_scalar(scale(z, -1.0, tape), 1.0, tape);
    return add(mul(omz, h, tape), mul(z, hh, tape), tape);
}

struct DecoderParams {
    std::vector<EncoderLayerParams> encoder_layers;
    AttentionParams cross;           // decoder cross-attention
    MlpParams dec_mlp;
    Tensor dec_ln1_gain, dec_ln1_bias, dec_ln2_gain, dec_ln2_bias;
    QuerySet queries;
    // waypoint head
    GruParams wp_gru;
    Tensor wp_target_w, wp_target_b;  // [2, H], [H]
    Tensor wp_out_w, wp_out_b;        // [H, 2], [2]
    // heatmap head (two linear layers with a ReLU)
    MlpParams ht_mlp;
    // traffic head (single linear layer)
    Tensor tf_w, tf_b;  // [D, 3], [3]

    static DecoderParams init(const Config& cfg, Rng& rng) {
        std::size_t d = cfg.model_dim, h = cfg.model_gru_hidden;
        DecoderParams p;
        for (std::size_t i = 0; i < cfg.model_enc_layers; ++i)
            p.encoder_layers.push_back(EncoderLayerParams::init(d, rng));
        p.cross = AttentionParams::init(d, rng);
        p.dec_mlp = MlpParams::init(d, 2 * d, d, rng);
        p.dec_ln1_gain = Tensor::ones({d});
        p.dec_ln1_bias = Tensor::zeros({d});
        p.dec_ln2_gain = Tensor::ones({d});
        p.dec_ln2_bias = Tensor::zeros({d});
        p.queries = QuerySet::init(d, cfg, rng);
        p.wp_gru = GruParams::init(d, h, rng);
        p.wp_target_w = rng.normal_tensor({2, h}, 0.5);
        p.wp_target_b = Tensor::zeros({h});
        p.wp_out_w = rng.normal_tensor({h, 2}, 1.0 / std::sqrt(static_cast<double>(h)));
        p.wp_out_b = Tensor::zeros({2});
        p.ht_mlp = MlpParams::init(d, 2 * d, 7, rng);
        p.tf_w = rng.normal_tensor({d, 3}, 1.0 / std::sqrt(static_cast<double>(d)));
        p.tf_b = Tensor::zeros({3});
        return p;
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> ps;
        auto push = [&](std::vector<Tensor> v) { ps.insert(ps.end(), v.begin(), v.end()); };
        for (auto& l : encoder_layers) push(l.parameters());
        push(cross.parameters());
        push(dec_mlp.parameters());
        for (Tensor* t : {&dec_ln1_gain, &dec_ln1_bias, &dec_ln2_gain, &dec_ln2_bias})
            ps.push_back(*t);
        push(queries.parameters());
        push(wp_gru.parameters());
        for (Tensor* t : {&wp_target_w, &wp_target_b, &wp_out_w, &wp_out_b}) ps.push_back(*t);
        push(ht_mlp.parameters());
        ps.push_back(tf_w);
        ps.push_back(tf_b);
        return ps;
    }
};

// ---------------------------------------------------------------------------
// Forward blocks
// ---------------------------------------------------------------------------

inline Tensor multihead_attention(const Tensor& q_in, const Tensor& kv_in,
                                  const AttentionParams& p, std::size_t heads,
                                  Tape* tape = nullptr) {
    std::size_t d = q_in.dim(1);
    if (heads == 0 || d % heads != 0)
        throw std::invalid_argument("multihead_attention: head count must divide dim");
    Tensor q = matmul(q_in, p.wq, tape);
    Tensor k = matmul(kv_in, p.wk, tape);
    Tensor v = matmul(kv_in, p.wv, tape);
    std::size_t hd = d / heads;
    Tensor attended;
    if (heads == 1) {
        attended = scaled_dot_attention(q, k, v, hd, tape);
    } else {
        // split along columns via transpose + slice_rows
        Tensor qt = transpose(q, tape), kt = transpose(k, tape), vt = transpose(v, tape);
        std::vector<Tensor> outs;
        for (std::size_t hh = 0; hh < heads; ++hh) {
            Tensor qh = transpose(slice_rows(qt, hh * hd, (hh + 1) * hd, tape), tape);
            Tensor kh = transpose(slice_rows(kt, hh * hd, (hh + 1) * hd, tape), tape);
            Tensor vh = transpose(slice_rows(vt, hh * hd, (hh + 1) * hd, tape), tape);
            outs.push_back(transpose(scaled_dot_attention(qh, kh, vh, hd, tape), tape));
        }
        attended = transpose(concat_rows(outs, tape), tape);
    }
    return matmul(attended, p.wo, tape);
}

inline Tensor mlp_forward(const Tensor& x, const MlpParams& p, Tape* tape = nullptr) {
    Tensor h = relu(add_rowvec(matmul(x, p.w1, tape), p.b1, tape), tape);
    return add_rowvec(matmul(h, p.w2, tape), p.b2, tape);
}

inline Tensor encoder_layer_forward(const Tensor& x, const EncoderLayerParams& p,
                                    const Config& cfg, Tape* tape = nullptr) {
    Tensor a = layer_norm(add(x, multihead_attention(x, x, p.attn, cfg.model_heads, tape), tape),
                          p.ln1_gain, p.ln1_bias, cfg.layer_norm_eps, tape);
    return layer_norm(add(a, mlp_forward(a, p.mlp, tape), tape), p.ln2_gain, p.ln2_bias,
                      cfg.layer_norm_eps, tape);
}

// K stacked encoder layers; optional Bernoulli token dropout (training only)
// is applied before layer 1.
inline TokenSequence encode(const TokenSequence& fused, const DecoderParams& p, const Config& cfg,
                            bool training = false, Rng* dropout_rng = nullptr,
                            Tape* tape = nullptr) {
    Tensor x = fused.tokens;
    if (training && dropout_rng && cfg.model_token_dropout > 0.0) {
        std::vector<double> mask(x.dim(0));
        for (auto& m : mask) m = dropout_rng->uniform() < cfg.model_token_dropout ? 0.0 : 1.0;
        x = scale_rows(x, Tensor({x.dim(0)}, std::move(mask)), tape);
    }
    for (const auto& layer : p.encoder_layers) x = encoder_layer_forward(x, layer, cfg, tape);
    TokenSequence out = fused;
    out.tokens = x;
    return out;
}

// Cross-attend all 411 queries against the encoded memory. Row blocks are
// ordered (waypoint 0..T-1, perception T..T+S^2-1, traffic last).
inline Tensor decode(const TokenSequence& memory, const DecoderParams& p, const Config& cfg,
                     Tape* tape = nullptr) {
    if (memory.count() == 0) throw std::invalid_argument("decode: empty memory");
    Tensor q = concat_rows({p.queries.waypoint, p.queries.perception, p.queries.traffic}, tape);
    Tensor a = layer_norm(
        add(q, multihead_attention(q, memory.tokens, p.cross, cfg.model_heads, tape), tape),
        p.dec_ln1_gain, p.dec_ln1_bias, cfg.layer_norm_eps, tape);
    return layer_norm(add(a, mlp_forward(a, p.dec_mlp, tape), tape), p.dec_ln2_gain, p.dec_ln2_bias,
                      cfg.layer_norm_eps, tape);
}

// Auto-regressive GRU head. The GRU's direct outputs are increments; exact
// positions are recovered by accumulation. Initial hidden state is a linear
// embedding of the target GPS location (ego frame, meters).
inline Tensor waypoint_head(const Tensor& z_wp, double target_x, double target_y,
                            const DecoderParams& p, Tape* tape = nullptr) {
    Tensor target({1, 2}, {target_x, target_y});
    Tensor h = add_rowvec(matmul(target, p.wp_target_w, tape), p.wp_target_b, tape);
    std::vector<Tensor> rows;
    Tensor pos;  // running accumulated position [1,2]
    for (std::size_t t = 0; t < z_wp.dim(0); ++t) {
        Tensor x = slice_rows(z_wp, t, t + 1, tape);
        h = gru_cell(x, h, p.wp_gru, tape);
        Tensor inc = add_rowvec(matmul(h, p.wp_out_w, tape), p.wp_out_b, tape);
        pos = (t == 0) ? inc : add(pos, inc, tape);
        rows.push_back(pos);
    }
    return concat_rows(rows, tape);  // [T, 2]
}

// Per-query 7-vector, existence channel through sigmoid, reshaped row-major
// to S x S x 7.
inline Tensor heatmap_head(const Tensor& z_ht, const DecoderParams& p, const Config& cfg,
                           Tape* tape = nullptr) {
    Tensor raw = mlp_forward(z_ht, p.ht_mlp, tape);  // [S^2, 7]
    Tensor probs = sigmoid(slice_rows(transpose(raw, tape), 0, 1, tape), tape);
    Tensor rest = slice_rows(transpose(raw, tape), 1, 7, tape);
    Tensor combined = transpose(concat_rows({probs, rest}, tape), tape);
    return reshape(combined, {cfg.heatmap_size, cfg.heatmap_size, 7}, tape);
}

inline Tensor traffic_head(const Tensor& z_tf, const DecoderParams& p, Tape* tape = nullptr) {
    return sigmoid(add_rowvec(matmul(z_tf, p.tf_w, tape), p.tf_b, tape), tape);  // [1, 3]
}

inline TrafficState to_traffic_state(const Tensor& t) {
    return {t.at(0, 0), t.at(0, 1), t.at(0, 2)};
}

}  // namespace m2da
