#pragma once

// Adam optimizer and the two training loops: driving-model imitation on
// expert records, and saliency-predictor pretraining on fixture rasters.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "m2da/dataset.hpp"
#include "m2da/losses.hpp"
#include "m2da/model.hpp"
#include "m2da/saliency.hpp"

namespace m2da {

class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            auto& vals = p.values();
            for (std::size_t j = 0; j < vals.size(); ++j) {
                double gj = g[j];
                if (!std::isfinite(gj)) gj = 0.0;
                m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * gj;
                v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * gj * gj;
                double mhat = m_[i][j] / bc1;
                double vhat = v_[i][j] / bc2;
                vals[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
};

struct TrainStats {
    std::vector<double> epoch_loss;  // mean total loss per epoch
    double final_loss = 0.0;
};

// Imitation learning on expert records. Per-record frozen inputs (saliency
// mask, BEV pooling) are computed once up front; each step runs one record.
inline TrainStats train_driving(M2DAModel& model, const std::vector<ExpertRecord>& records,
                                std::size_t epochs, double lr, std::uint64_t seed,
                                const Config& cfg) {
    if (records.empty()) throw std::invalid_argument("train_driving: empty dataset");
    std::vector<PreparedInput> prepared;
    prepared.reserve(records.size());
    for (const auto& r : records) prepared.push_back(model.prepare(model.input_from_record(r)));

    Adam opt(model.parameters(), lr);
    Rng order_rng(seed);
    Rng dropout_rng(seed ^ 0x5bf0a8b1ULL);
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), 0);

    TrainStats stats;
    for (std::size_t e = 0; e < epochs; ++e) {
        // Fisher-Yates with the session RNG keeps runs reproducible
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[order_rng.next_u64() % i]);
        double total = 0.0;
        for (std::size_t i : idx) {
            const ExpertRecord& r = records[i];
            Tape tape;
            ModelOutput out = model.forward(prepared[i], true, &dropout_rng, &tape);
            Tensor gt_tf({1, 3}, {r.traffic_red, r.traffic_stop, r.traffic_intersection});
            Tensor loss = total_loss(waypoint_loss(out.waypoints, r.waypoints, &tape),
                                     heatmap_loss(out.heatmap, r.heatmap, &tape),
                                     traffic_loss(out.traffic, gt_tf, cfg, &tape), cfg, &tape);
            tape.backward(loss);
            opt.step();
            total += loss.item();
        }
        stats.epoch_loss.push_back(total / static_cast<double>(records.size()));
    }
    stats.final_loss = stats.epoch_loss.empty() ? 0.0 : stats.epoch_loss.back();
    return stats;
}

// Attention-pretraining fixtures from expert records: every stride-th front
// image, with a target built from its rendered agent and light channels.
inline std::vector<std::pair<Tensor, Tensor>> attention_pairs(
    const std::vector<ExpertRecord>& records, std::size_t stride, std::vector<int>& towns_out) {
    if (stride == 0) stride = 1;
    std::vector<std::pair<Tensor, Tensor>> pairs;
    for (std::size_t i = 0; i < records.size(); i += stride) {
        const Tensor& f = records[i].front;
        std::size_t n = f.dim(1), hw = n * n;
        Tensor tgt = Tensor::zeros({n, n});
        double mass = 0.0;
        for (std::size_t p = 0; p < hw; ++p) {
            tgt.data()[p] = f.data()[hw + p] + f.data()[2 * hw + p];
            mass += tgt.data()[p];
        }
        if (mass <= 0.0) continue;  // constant targets have undefined CC
        pairs.emplace_back(f, tgt);
        towns_out.push_back(records[i].town);
    }
    return pairs;
}

// Pretrains the saliency predictor against ground-truth rasters with the
// KLD/CC/SIM objective. Pairs are (front image, target saliency map).
inline TrainStats pretrain_attention(SaliencyPredictor& da,
                                     const std::vector<std::pair<Tensor, Tensor>>& pairs,
                                     const std::vector<int>& towns, std::size_t epochs, double lr,
                                     const Config& cfg) {
    if (pairs.size() != towns.size() || pairs.empty())
        throw std::invalid_argument("pretrain_attention: bad fixture set");
    Adam opt(da.parameters(), lr);
    TrainStats stats;
    for (std::size_t e = 0; e < epochs; ++e) {
        double total = 0.0;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            Tape tape;
            da.reset_stream();
            SaliencyMap pred = da.predict(pairs[i].first, towns[i], &tape);
            SaliencyMap gt = normalize_saliency({pairs[i].second, false});
            Tensor loss = da_loss(pred.values, gt.values, cfg, &tape);
            tape.backward(loss);
            opt.step();
            total += loss.item();
        }
        stats.epoch_loss.push_back(total / static_cast<double>(pairs.size()));
    }
    stats.final_loss = stats.epoch_loss.empty() ? 0.0 : stats.epoch_loss.back();
    return stats;
}

// Wraps the model as a closed-loop policy: render sensors, run the forward
// pass, decode the heatmap into objects for the safety controller.
inline Policy make_model_policy(M2DAModel& model, const Config& cfg) {
    return [&model, cfg](const Scene& scene) -> PolicyOutput {
        ModelInput in;
        in.left = render_camera(scene, M_PI / 3.0, cfg);
        in.front = render_camera(scene, 0.0, cfg);
        in.right = render_camera(scene, -M_PI / 3.0, cfg);
        BevGrid grid = rasterize(make_lidar(scene, cfg), cfg);
        in.bev = bev_to_tensor(grid, cfg.bev_log1p);
        auto tgt = gt_target(scene);
        in.target_x = tgt[0];
        in.target_y = tgt[1];
        in.town = scene.route.town;
        ModelOutput out = model.forward(in);
        PolicyOutput p;
        p.waypoints = to_waypoints(out.waypoints);
        p.traffic = to_traffic_state(out.traffic);
        p.objects = decode_heatmap({out.heatmap}, cfg.heatmap_threshold, cfg);
        return p;
    };
}

}  // namespace m2da
