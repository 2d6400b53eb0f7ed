#pragma once

// The complete loss suite: waypoint L1, balanced heatmap probability loss,
// masked attribute L1, weighted traffic-state loss, and the weighted total.

#include <stdexcept>

#include "m2da/config.hpp"
#include "m2da/decoder.hpp"
#include "m2da/tensor.hpp"

namespace m2da {

// sum_t || w_t - w_t^gt ||_1
inline Tensor waypoint_loss(const Tensor& pred, const Tensor& gt, Tape* tape = nullptr) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("waypoint_loss: length mismatch");
    return sum(abs_op(sub(pred, gt, tape), tape), tape);
}

namespace detail {

// Existence probability channel as a flat [S^2] tensor.
inline Tensor prob_channel(const Tensor& heatmap, Tape* tape) {
    std::size_t s = heatmap.dim(0);
    Tensor flat = reshape(heatmap, {s * s, 7}, tape);
    return reshape(slice_rows(transpose(flat, tape), 0, 1, tape), {s * s}, tape);
}

}  // namespace detail

// Binary cross-entropy averaged separately over positive and negative cells,
// then combined with equal weight. An empty class contributes 0.
inline Tensor heatmap_prob_loss(const Tensor& pred, const Tensor& gt, Tape* tape = nullptr) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("heatmap_prob_loss: shape mismatch");
    Tensor p = detail::prob_channel(pred, tape);
    Tensor t = detail::prob_channel(gt, nullptr);
    std::size_t n = p.size();
    std::vector<double> pos_mask(n, 0.0), neg_mask(n, 0.0);
    double npos = 0.0, nneg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (t.at(i) == 1.0) {
            pos_mask[i] = 1.0;
            npos += 1.0;
        } else {
            neg_mask[i] = 1.0;
            nneg += 1.0;
        }
    }
    Tensor cell_bce = bce(p, t, 1e-7, tape);
    Tensor total = Tensor::scalar(0.0);
    if (npos > 0.0)
        total = add(total, scale(sum(mul(cell_bce, Tensor({n}, std::move(pos_mask)), tape), tape),
                                 1.0 / npos, tape), tape);
    if (nneg > 0.0)
        total = add(total, scale(sum(mul(cell_bce, Tensor({n}, std::move(neg_mask)), tape), tape),
                                 1.0 / nneg, tape), tape);
    return scale(total, 0.5, tape);
}

// (1/S) * sum over positive-gt cells of the channel-1..6 L1 error, where S is
// the number of positive objects; 0 when the scene is empty.
inline Tensor heatmap_attr_loss(const Tensor& pred, const Tensor& gt, Tape* tape = nullptr) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("heatmap_attr_loss: shape mismatch");
    std::size_t s = pred.dim(0);
    std::vector<double> mask(s * s * 7, 0.0);
    double npos = 0.0;
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
            if (gt.at(i, j, 0) != 1.0) continue;
            npos += 1.0;
            for (std::size_t k = 1; k < 7; ++k) mask[(i * s + j) * 7 + k] = 1.0;
        }
    if (npos == 0.0) return Tensor::scalar(0.0);
    Tensor diff = abs_op(sub(pred, gt, tape), tape);
    return scale(sum(mul(diff, Tensor(pred.shape(), std::move(mask)), tape), tape), 1.0 / npos, tape);
}

inline Tensor heatmap_loss(const Tensor& pred, const Tensor& gt, Tape* tape = nullptr) {
    return add(heatmap_prob_loss(pred, gt, tape), heatmap_attr_loss(pred, gt, tape), tape);
}

// lambda_tl * BCE(red light) + lambda_sl * BCE(stop sign) + lambda_i * BCE(intersection)
inline Tensor traffic_loss(const Tensor& pred, const Tensor& gt, const Config& cfg = Config{},
                           Tape* tape = nullptr) {
    if (!pred.same_shape(gt) || pred.size() != 3)
        throw std::invalid_argument("traffic_loss: [1,3] tensors required");
    Tensor weights(pred.shape(), {cfg.lambda_tl, cfg.lambda_sl, cfg.lambda_i});
    return sum(mul(bce(pred, gt, 1e-7, tape), weights, tape), tape);
}

// lambda_wp * L_wp + lambda_ht * L_ht + lambda_tf * L_tf, where L_ht is the
// sum of the heatmap probability and attribute losses.
inline Tensor total_loss(const Tensor& l_wp, const Tensor& l_ht, const Tensor& l_tf,
                         const Config& cfg = Config{}, Tape* tape = nullptr) {
    Tensor t = scale(l_wp, cfg.lambda_wp, tape);
    t = add(t, scale(l_ht, cfg.lambda_ht, tape), tape);
    return add(t, scale(l_tf, cfg.lambda_tf, tape), tape);
}

}  // namespace m2da
