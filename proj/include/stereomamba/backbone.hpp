// SPDX-License-Identifier: Apache-2.0
//
// Feature extraction: a four-stage pyramid of visual state-space blocks with
// shared weights across the two views, plus a cross-view attention block at
// quarter resolution. Each state-space block runs the selective scan along
// four spatial traversals (rows and columns, both senses), with per-traversal
// input/output/step-size heads; the step size gates the decay
// a_t = exp(-softplus(rate) * softplus(dt_t)).

#pragma once

#include <array>
#include <optional>

#include "stereomamba/layers.hpp"
#include "stereomamba/ssm.hpp"

namespace stereomamba {

struct BackboneConfig {
    int64_t in_channels = 3;
    int64_t c0 = 16;  // stem / gate source
    int64_t c1 = 16;  // quarter-resolution stage
    int64_t c2 = 32;  // eighth-resolution stage
    int64_t c3 = 64;  // sixteenth-resolution stages
    int64_t c4 = 16;  // cross-view output
    int64_t n_state = 8;
    int64_t blocks_per_stage = 2;
    int64_t ffn_expand = 2;

    void validate() const {
        for (int64_t v : {in_channels, c0, c1, c2, c3, c4, n_state, blocks_per_stage, ffn_expand})
            if (v < 1) throw std::invalid_argument("backbone config: all extents must be >= 1");
    }
};

inline constexpr double kDecayRawInit = 0.5413248546129181;    // softplus -> 1.0
inline constexpr double kDeltaBiasInit = -1.2586610805965195;  // softplus -> 0.25

struct ScanHeads {
    LinearLayer b_head, c_head, dt_head;
    Parameter* decay;

    ScanHeads(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t c, int64_t n)
        : b_head(reg, seed, prefix + ".b", c, n),
          c_head(reg, seed, prefix + ".c", c, n),
          dt_head(reg, seed, prefix + ".dt", c, 1),
          decay(&add_const_param(reg, prefix + ".a", {1}, kDecayRawInit)) {
        dt_head.b->value.fill(kDeltaBiasInit);
    }
};

// dt and the output mix come from `plan`, the input mix and the scanned
// stream from `source`; self-attention passes the same sequence for both.
inline NodeId run_selective_scan(Tape& t, const ScanHeads& h, NodeId plan_tc, NodeId source_tc,
                                 NodeId source_ct) {
    const int64_t T = t.value(plan_tc).dim(0);
    NodeId bmat = h.b_head(t, source_tc);
    NodeId cmat = h.c_head(t, plan_tc);
    NodeId dt = ops::softplus(t, ops::reshape(t, h.dt_head(t, plan_tc), {T}));
    NodeId rate = ops::softplus(t, t.param(*h.decay));
    NodeId decay = ops::exp(t, ops::scale(t, ops::scale_by(t, dt, rate), -1.0));
    return ops::ssm_scan(t, decay, bmat, cmat, source_ct);
}

enum class Traversal { row_fwd, row_rev, col_fwd, col_rev };

inline NodeId arrange(Tape& t, NodeId x, int64_t c, int64_t h, int64_t w, Traversal dir) {
    NodeId seq = (dir == Traversal::row_fwd || dir == Traversal::row_rev)
                     ? ops::reshape(t, x, {c, h * w})
                     : ops::reshape(t, ops::permute(t, x, {0, 2, 1}), {c, w * h});
    if (dir == Traversal::row_rev || dir == Traversal::col_rev) seq = ops::reverse_lastdim(t, seq);
    return seq;
}

inline NodeId unarrange(Tape& t, NodeId y, int64_t c, int64_t h, int64_t w, Traversal dir) {
    if (dir == Traversal::row_rev || dir == Traversal::col_rev) y = ops::reverse_lastdim(t, y);
    if (dir == Traversal::row_fwd || dir == Traversal::row_rev) return ops::reshape(t, y, {c, h, w});
    return ops::permute(t, ops::reshape(t, y, {c, w, h}), {0, 2, 1});
}

// test hook: captures the per-traversal outputs of one evaluation
struct Ss2dProbe {
    std::vector<Tensor> direction_outputs;
};

struct Ss2d {
    static constexpr std::array<Traversal, 4> kDirs{Traversal::row_fwd, Traversal::row_rev,
                                                    Traversal::col_fwd, Traversal::col_rev};
    int64_t channels;
    std::vector<ScanHeads> heads;
    Ss2dProbe* probe = nullptr;

    Ss2d(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t c, int64_t n)
        : channels(c) {
        static constexpr std::array<const char*, 4> names{"rowf", "rowr", "colf", "colr"};
        heads.reserve(4);
        for (const char* nm : names) heads.emplace_back(reg, seed, prefix + "." + nm, c, n);
    }

    NodeId operator()(Tape& t, NodeId x) const {
        const Tensor& v = t.value(x);
        if (v.rank() != 3 || v.dim(0) != channels)
            throw std::invalid_argument("ss2d: expected [" + std::to_string(channels) +
                                        ", H, W], got " + shape_str(v.shape()));
        const int64_t h = v.dim(1), w = v.dim(2);
        NodeId total = 0;
        for (size_t i = 0; i < kDirs.size(); ++i) {
            NodeId seq_ct = arrange(t, x, channels, h, w, kDirs[i]);
            NodeId seq_tc = ops::permute(t, seq_ct, {1, 0});
            NodeId y = run_selective_scan(t, heads[i], seq_tc, seq_tc, seq_ct);
            NodeId y3 = unarrange(t, y, channels, h, w, kDirs[i]);
            if (probe) probe->direction_outputs.push_back(t.value(y3).clone());
            total = i == 0 ? y3 : ops::add(t, total, y3);
        }
        return total;
    }
};

struct VssBlock {
    LayerNormLayer ln1, ln_inner, ln2;
    Conv2dLayer pre;
    DepthwiseLayer dw;
    Ss2d scan;
    Conv2dLayer ffn1, ffn2;

    VssBlock(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t c, int64_t n_state,
             int64_t ffn_expand)
        : ln1(reg, prefix + ".ln1", c, 0),
          ln_inner(reg, prefix + ".lni", c, 0),
          ln2(reg, prefix + ".ln2", c, 0),
          pre(reg, seed, prefix + ".pre", c, c, 1, 1, 0),
          dw(reg, seed, prefix + ".dw", c, 3, 1, 1),
          scan(reg, seed, prefix + ".ss2d", c, n_state),
          ffn1(reg, seed, prefix + ".ffn1", c, c * ffn_expand, 1, 1, 0),
          ffn2(reg, seed, prefix + ".ffn2", c * ffn_expand, c, 1, 1, 0) {}

    NodeId operator()(Tape& t, NodeId x) const {
        NodeId br = pre(t, ln1(t, x));
        br = ops::silu(t, dw(t, br));
        br = ln_inner(t, scan(t, br));
        NodeId x2 = ops::add(t, x, br);
        NodeId f = ffn2(t, ops::gelu(t, ffn1(t, ln2(t, x2))));
        return ops::add(t, x2, f);
    }
};

struct Downsample {
    Conv2dLayer conv;
    LayerNormLayer ln;

    Downsample(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t cin, int64_t cout)
        : conv(reg, seed, prefix + ".conv", cin, cout, 3, 2, 1), ln(reg, prefix + ".ln", cout, 0) {}

    NodeId operator()(Tape& t, NodeId x) const { return ln(t, conv(t, x)); }
};

struct ViewPyramid {
    NodeId f0, f1, f2, f3;
};

inline void check_backbone_image(const Tensor& v, int64_t in_channels) {
    if (v.rank() != 3 || v.dim(0) != in_channels)
        throw std::invalid_argument("backbone: expected image [" + std::to_string(in_channels) +
                                    ", H, W], got " + shape_str(v.shape()));
    if (v.dim(1) % 16 != 0 || v.dim(2) % 16 != 0)
        throw std::invalid_argument("backbone: image height and width must be multiples of 16, got " +
                                    shape_str(v.shape()));
}

class ScanBackbone {
public:
    ScanBackbone(ParamRegistry& reg, uint64_t seed, const BackboneConfig& cfg)
        : cfg_(cfg),
          stem_conv_(reg, seed, "fe.stem.conv", cfg.in_channels, cfg.c0, 4, 4, 0),
          stem_ln_(reg, "fe.stem.ln", cfg.c0, 0) {
        cfg.validate();
        if (cfg.c0 != cfg.c1) proj1_.emplace(reg, seed, "fe.stage1.proj", cfg.c0, cfg.c1, 1, 1, 0);
        auto make_stage = [&](std::vector<VssBlock>& stage, const std::string& name, int64_t c) {
            stage.reserve(static_cast<size_t>(cfg.blocks_per_stage));
            for (int64_t i = 0; i < cfg.blocks_per_stage; ++i)
                stage.emplace_back(reg, seed, "fe." + name + ".block" + std::to_string(i), c, cfg.n_state,
                                   cfg.ffn_expand);
        };
        make_stage(stage1_, "stage1", cfg.c1);
        down1_.emplace(reg, seed, "fe.down1", cfg.c1, cfg.c2);
        make_stage(stage2_, "stage2", cfg.c2);
        down2_.emplace(reg, seed, "fe.down2", cfg.c2, cfg.c3);
        make_stage(stage3_, "stage3", cfg.c3);
        make_stage(stage4_, "stage4", cfg.c3);
    }

    ViewPyramid forward(Tape& t, NodeId image) const {
        check_backbone_image(t.value(image), cfg_.in_channels);
        NodeId f0 = ops::silu(t, stem_ln_(t, stem_conv_(t, image)));
        NodeId x = proj1_ ? (*proj1_)(t, f0) : f0;
        for (const auto& b : stage1_) x = b(t, x);
        NodeId f1 = x;
        x = (*down1_)(t, f1);
        for (const auto& b : stage2_) x = b(t, x);
        NodeId f2 = x;
        x = (*down2_)(t, f2);
        for (const auto& b : stage3_) x = b(t, x);
        for (const auto& b : stage4_) x = b(t, x);
        return {f0, f1, f2, x};
    }

private:
    BackboneConfig cfg_;
    Conv2dLayer stem_conv_;
    LayerNormLayer stem_ln_;
    std::optional<Conv2dLayer> proj1_;
    std::vector<VssBlock> stage1_, stage2_, stage3_, stage4_;
    std::optional<Downsample> down1_, down2_;
};

// Plain residual-conv pyramid with the same interface and feature geometry;
// exists so runs with and without the scan machinery are directly comparable.
class PlainConvBackbone {
public:
    PlainConvBackbone(ParamRegistry& reg, uint64_t seed, const BackboneConfig& cfg)
        : cfg_(cfg),
          stem_conv_(reg, seed, "fe.stem.conv", cfg.in_channels, cfg.c0, 4, 4, 0),
          stem_ln_(reg, "fe.stem.ln", cfg.c0, 0) {
        cfg.validate();
        if (cfg.c0 != cfg.c1) proj1_.emplace(reg, seed, "fe.stage1.proj", cfg.c0, cfg.c1, 1, 1, 0);
        auto make_stage = [&](std::vector<Conv2dLayer>& convs, std::vector<LayerNormLayer>& lns,
                              const std::string& name, int64_t c) {
            for (int64_t i = 0; i < cfg.blocks_per_stage; ++i) {
                std::string p = "fe." + name + ".block" + std::to_string(i);
                convs.emplace_back(reg, seed, p + ".conv", c, c, 3, 1, 1);
                lns.emplace_back(reg, p + ".ln", c, 0);
            }
        };
        make_stage(s1_, s1n_, "stage1", cfg.c1);
        down1_.emplace(reg, seed, "fe.down1", cfg.c1, cfg.c2);
        make_stage(s2_, s2n_, "stage2", cfg.c2);
        down2_.emplace(reg, seed, "fe.down2", cfg.c2, cfg.c3);
        make_stage(s3_, s3n_, "stage3", cfg.c3);
        make_stage(s4_, s4n_, "stage4", cfg.c3);
    }

    ViewPyramid forward(Tape& t, NodeId image) const {
        check_backbone_image(t.value(image), cfg_.in_channels);
        NodeId f0 = ops::silu(t, stem_ln_(t, stem_conv_(t, image)));
        NodeId x = proj1_ ? (*proj1_)(t, f0) : f0;
        auto run = [&t](NodeId in, const std::vector<Conv2dLayer>& cs,
                        const std::vector<LayerNormLayer>& ns) {
            NodeId v = in;
            for (size_t i = 0; i < cs.size(); ++i)
                v = ops::add(t, v, ops::silu(t, ns[i](t, cs[i](t, v))));
            return v;
        };
        NodeId f1 = run(x, s1_, s1n_);
        NodeId f2 = run((*down1_)(t, f1), s2_, s2n_);
        NodeId f3 = run(run((*down2_)(t, f2), s3_, s3n_), s4_, s4n_);
        return {f0, f1, f2, f3};
    }

private:
    BackboneConfig cfg_;
    Conv2dLayer stem_conv_;
    LayerNormLayer stem_ln_;
    std::optional<Conv2dLayer> proj1_;
    std::vector<Conv2dLayer> s1_, s2_, s3_, s4_;
    std::vector<LayerNormLayer> s1n_, s2n_, s3n_, s4n_;
    std::optional<Downsample> down1_, down2_;
};

// Cross-view attention at quarter resolution: for the left output the step
// size and output mix are driven by the left sequence while the input mix and
// the scanned stream come from the right view (and vice versa), over row
// traversals in both senses. The result is gated by a stem-feature gate,
// normalized over channels and projected to the matching-feature width.
class CrossViewAttention {
public:
    CrossViewAttention(ParamRegistry& reg, uint64_t seed, const BackboneConfig& cfg)
        : c1_(cfg.c1),
          gate_(reg, seed, "cross.gate", cfg.c0, cfg.c1, 1, 1, 0),
          norm_(reg, "cross.norm", cfg.c1, 0),
          out_(reg, seed, "cross.out", cfg.c1, cfg.c4, 1, 1, 0) {
        heads_.reserve(2);
        heads_.emplace_back(reg, seed, "cross.rowf", cfg.c1, cfg.n_state);
        heads_.emplace_back(reg, seed, "cross.rowr", cfg.c1, cfg.n_state);
    }

    // returns {f4_left, f4_right}; both views share every weight
    std::pair<NodeId, NodeId> forward(Tape& t, NodeId f1_l, NodeId f1_r, NodeId f0_l,
                                      NodeId f0_r) const {
        NodeId yl = attend(t, f1_l, f1_r);
        NodeId yr = attend(t, f1_r, f1_l);
        return {project(t, yl, f0_l), project(t, yr, f0_r)};
    }

private:
    NodeId attend(Tape& t, NodeId plan_view, NodeId source_view) const {
        const Tensor& v = t.value(plan_view);
        if (v.rank() != 3 || v.dim(0) != c1_ || !v.same_shape(t.value(source_view)))
            throw std::invalid_argument("cross attention: view features must both be [" +
                                        std::to_string(c1_) + ", H, W], got " + shape_str(v.shape()) +
                                        " and " + shape_str(t.value(source_view).shape()));
        const int64_t h = v.dim(1), w = v.dim(2);
        NodeId total = 0;
        const std::array<Traversal, 2> dirs{Traversal::row_fwd, Traversal::row_rev};
        for (size_t i = 0; i < dirs.size(); ++i) {
            NodeId plan_ct = arrange(t, plan_view, c1_, h, w, dirs[i]);
            NodeId source_ct = arrange(t, source_view, c1_, h, w, dirs[i]);
            NodeId y = run_selective_scan(t, heads_[i], ops::permute(t, plan_ct, {1, 0}),
                                          ops::permute(t, source_ct, {1, 0}), source_ct);
            NodeId y3 = unarrange(t, y, c1_, h, w, dirs[i]);
            total = i == 0 ? y3 : ops::add(t, total, y3);
        }
        return total;
    }

    NodeId project(Tape& t, NodeId y, NodeId f0) const {
        NodeId g = ops::gelu(t, gate_(t, f0));
        return out_(t, norm_(t, ops::mul(t, y, g)));
    }

    int64_t c1_;
    std::vector<ScanHeads> heads_;
    Conv2dLayer gate_;
    RmsNormLayer norm_;
    Conv2dLayer out_;
};

struct ViewFeatures {
    NodeId f1, f2, f3, f4;
};

// Owns whichever backbone variant the run uses, applies it to both views with
// shared weights and attaches the cross-view (or plain projection) output.
class FeatureExtractor {
public:
    FeatureExtractor(ParamRegistry& reg, uint64_t seed, const BackboneConfig& cfg, bool use_scan)
        : use_scan_(use_scan) {
        if (use_scan) {
            scan_bb_.emplace(reg, seed, cfg);
            cross_.emplace(reg, seed, cfg);
        } else {
            plain_bb_.emplace(reg, seed, cfg);
            plain_f4_.emplace(reg, seed, "cross.out", cfg.c1, cfg.c4, 1, 1, 0);
        }
    }

    std::pair<ViewFeatures, ViewFeatures> forward(Tape& t, NodeId left, NodeId right) const {
        if (!t.value(left).same_shape(t.value(right)))
            throw std::invalid_argument("feature extractor: view shapes differ, " +
                                        shape_str(t.value(left).shape()) + " vs " +
                                        shape_str(t.value(right).shape()));
        if (use_scan_) {
            ViewPyramid pl = scan_bb_->forward(t, left);
            ViewPyramid pr = scan_bb_->forward(t, right);
            auto [f4l, f4r] = cross_->forward(t, pl.f1, pr.f1, pl.f0, pr.f0);
            return {{pl.f1, pl.f2, pl.f3, f4l}, {pr.f1, pr.f2, pr.f3, f4r}};
        }
        ViewPyramid pl = plain_bb_->forward(t, left);
        ViewPyramid pr = plain_bb_->forward(t, right);
        return {{pl.f1, pl.f2, pl.f3, (*plain_f4_)(t, pl.f1)},
                {pr.f1, pr.f2, pr.f3, (*plain_f4_)(t, pr.f1)}};
    }

private:
    bool use_scan_;
    std::optional<ScanBackbone> scan_bb_;
    std::optional<PlainConvBackbone> plain_bb_;
    std::optional<CrossViewAttention> cross_;
    std::optional<Conv2dLayer> plain_f4_;
};

}  // namespace stereomamba
