// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stereomamba/aggregation.hpp"
#include "stereomamba/backbone.hpp"
#include "stereomamba/fusion.hpp"

namespace stereomamba {

struct ModelConfig {
    BackboneConfig backbone;
    FusionConfig fusion;
    int64_t d_max = 192;      // disparity search range at full resolution
    int64_t n_groups = 8;     // correlation groups over the fused descriptor
    int64_t agg_base = 8;     // channel width of the 3d aggregation trunk
    bool use_scan = true;     // false swaps the scan backbone for plain convs
    bool mff_enabled = true;  // false feeds quarter-scale features straight to the volume

    int64_t d_quarter() const { return d_max / 4; }

    // Channel count of the descriptor the correlation volume sees.
    int64_t volume_channels() const {
        return mff_enabled ? fused_channels(backbone, fusion) : backbone.c1;
    }

    void validate() const {
        backbone.validate();
        fusion.validate();
        if (d_max < 4 || d_max % 4 != 0)
            throw std::invalid_argument("model config: d_max must be a positive multiple of 4, got " +
                                        std::to_string(d_max));
        int64_t fused = volume_channels();
        if (n_groups < 1 || fused % n_groups != 0)
            throw std::invalid_argument("model config: volume width " + std::to_string(fused) +
                                        " does not split into " + std::to_string(n_groups) +
                                        " correlation groups");
        if (agg_base < 2 || agg_base % 2 != 0)
            throw std::invalid_argument("model config: agg_base must be even and >= 2, got " +
                                        std::to_string(agg_base));
    }
};

// Head outputs are supervised coarsest-first; the last (deepest) head is the
// one used at inference time and carries the largest weight.
inline constexpr std::array<double, 4> kHeadLossWeights{0.5, 0.5, 0.7, 1.0};

class StereoModel {
public:
    StereoModel(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        fe_.emplace(params_, init_seed, cfg_.backbone, cfg_.use_scan);
        if (cfg_.mff_enabled) fuse_.emplace(params_, init_seed, cfg_.backbone, cfg_.fusion);
        agg_.emplace(params_, init_seed, cfg_.n_groups, cfg_.agg_base, cfg_.d_quarter());
    }

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

    // Full-resolution disparity maps [H, W]. all_heads=true yields one map per
    // supervision head (training); false yields only the final head.
    std::vector<NodeId> forward(Tape& t, NodeId left, NodeId right, bool all_heads) const {
        auto [fl, fr] = fe_->forward(t, left, right);
        NodeId gl = cfg_.mff_enabled ? fuse_->forward(t, fl) : fl.f1;
        NodeId gr = cfg_.mff_enabled ? fuse_->forward(t, fr) : fr.f1;
        NodeId vol = ops::gwc_volume(t, gl, gr, cfg_.d_quarter(), cfg_.n_groups);
        std::vector<NodeId> out;
        for (NodeId cost : agg_->forward(t, vol, all_heads)) out.push_back(disparity_regression(t, cost));
        return out;
    }

private:
    ModelConfig cfg_;
    ParamRegistry params_;
    std::optional<FeatureExtractor> fe_;
    std::optional<FeatureFusion> fuse_;
    std::optional<CostAggregation> agg_;
};

// 1 where the label is usable for supervision: finite and inside (0, d_max).
inline Tensor supervision_mask(const Tensor& gt, int64_t d_max) {
    Tensor m(gt.shape());
    for (int64_t i = 0; i < gt.size(); ++i) {
        double d = gt[i];
        m[i] = (std::isfinite(d) && d > 0.0 && d < static_cast<double>(d_max)) ? 1.0 : 0.0;
    }
    return m;
}

// Weighted multi-head robust loss for one stereo pair. Accepts either the
// four training maps or a single final-head map (weighted 1.0).
inline NodeId stereo_loss(Tape& t, const std::vector<NodeId>& disparities, const Tensor& gt,
                          const Tensor& mask,
                          const std::array<double, 4>& weights = kHeadLossWeights) {
    if (disparities.empty()) throw std::invalid_argument("stereo loss needs at least one disparity map");
    if (disparities.size() > weights.size())
        throw std::invalid_argument("stereo loss expects at most " + std::to_string(weights.size()) +
                                    " disparity maps");
    for (double w : weights)
        if (w < 0.0) throw std::invalid_argument("stereo loss weights must be nonnegative");
    // A lone map is the final head; a full set is weighted in head order.
    size_t base = disparities.size() == 1 ? weights.size() - 1 : 0;
    NodeId total = -1;
    for (size_t i = 0; i < disparities.size(); ++i) {
        NodeId term = ops::scale(t, ops::smooth_l1_masked_mean(t, disparities[i], gt, mask),
                                 weights[base + i]);
        total = (i == 0) ? term : ops::add(t, total, term);
    }
    return total;
}

// Records an inference-only graph and extracts the final disparity map.
inline Tensor predict_disparity(const StereoModel& model, const Tensor& left, const Tensor& right) {
    Tape t(false);
    NodeId l = t.constant(left);
    NodeId r = t.constant(right);
    std::vector<NodeId> maps = model.forward(t, l, r, false);
    return t.value(maps.back()).clone();
}

}  // namespace stereomamba
