// SPDX-License-Identifier: Apache-2.0
//
// Multi-scale feature fusion and the group-wise correlation cost volume.
// Fusion lifts the coarse pyramid levels back to quarter resolution with
// learned upsampling, folds in the skip features, and appends the cross-view
// matching features. The volume correlates fused left/right features group by
// group over quarter-resolution disparities; columns left of the shift are
// structurally zero.

#pragma once

#include "stereomamba/backbone.hpp"

namespace stereomamba::ops {

// fl, fr [C, H, W] -> [groups, d_q, H, W];
// out(g,d,y,x) = (groups/C) * sum_{c in group g} fl(c,y,x) * fr(c,y,x-d)
inline NodeId gwc_volume(Tape& t, NodeId fl, NodeId fr, int64_t d_q, int64_t groups) {
    const Tensor& vl = t.value(fl);
    const Tensor& vr = t.value(fr);
    if (vl.rank() != 3 || !vl.same_shape(vr))
        throw std::invalid_argument("gwc_volume: feature maps must share [C, H, W], got " +
                                    shape_str(vl.shape()) + " and " + shape_str(vr.shape()));
    const int64_t c = vl.dim(0), h = vl.dim(1), w = vl.dim(2);
    if (groups < 1 || c % groups != 0)
        throw std::invalid_argument("gwc_volume: " + std::to_string(c) + " channels not divisible into " +
                                    std::to_string(groups) + " groups");
    if (d_q < 1 || d_q > w)
        throw std::invalid_argument("gwc_volume: disparity range " + std::to_string(d_q) +
                                    " outside [1, width=" + std::to_string(w) + "]");
    const int64_t per = c / groups;
    const double scale = static_cast<double>(groups) / static_cast<double>(c);
    Tensor out = Tensor::zeros({groups, d_q, h, w});
    for (int64_t g = 0; g < groups; ++g)
        for (int64_t d = 0; d < d_q; ++d)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = d; x < w; ++x) {
                    double acc = 0.0;
                    for (int64_t k = 0; k < per; ++k) {
                        int64_t ch = g * per + k;
                        acc += vl[(ch * h + y) * w + x] * vr[(ch * h + y) * w + x - d];
                    }
                    out[((g * d_q + d) * h + y) * w + x] = scale * acc;
                }
    return t.push(std::move(out), {fl, fr},
                  [fl, fr, d_q, groups, per, scale, h, w, self = t.node_count()](Tape& tp) {
                      const Tensor& gy = tp.grad(static_cast<NodeId>(self));
                      const Tensor& vl = tp.value(fl);
                      const Tensor& vr = tp.value(fr);
                      Tensor* gl = tp.grad_ptr(fl);
                      Tensor* gr = tp.grad_ptr(fr);
                      for (int64_t g = 0; g < groups; ++g)
                          for (int64_t d = 0; d < d_q; ++d)
                              for (int64_t y = 0; y < h; ++y)
                                  for (int64_t x = d; x < w; ++x) {
                                      double go = scale * gy[((g * d_q + d) * h + y) * w + x];
                                      if (go == 0.0) continue;
                                      for (int64_t k = 0; k < per; ++k) {
                                          int64_t ch = g * per + k;
                                          int64_t il = (ch * h + y) * w + x;
                                          int64_t ir = il - d;
                                          if (gl) (*gl)[il] += go * vr[ir];
                                          if (gr) (*gr)[ir] += go * vl[il];
                                      }
                                  }
                  });
}

}  // namespace stereomamba::ops

namespace stereomamba {

struct FusionConfig {
    int64_t up3 = 32;  // width after lifting the sixteenth-scale level
    int64_t up2 = 32;  // width after lifting to quarter scale

    void validate() const {
        if (up3 < 1 || up2 < 1) throw std::invalid_argument("fusion config: widths must be >= 1");
    }
};

inline int64_t fused_channels(const BackboneConfig& bb, const FusionConfig& fu) {
    return fu.up2 + bb.c1 + bb.c4;
}

class FeatureFusion {
public:
    FeatureFusion(ParamRegistry& reg, uint64_t seed, const BackboneConfig& bb, const FusionConfig& fu)
        : c1_(bb.c1),
          c2_(bb.c2),
          c4_(bb.c4),
          up3_(reg, seed, "fuse.up3", bb.c3, fu.up3, 2, 2, 0),
          up2_(reg, seed, "fuse.up2", fu.up3 + bb.c2, fu.up2, 2, 2, 0),
          mix_(reg, seed, "fuse.mix", fu.up2 + bb.c1, fu.up2 + bb.c1, 3, 1, 1) {
        fu.validate();
    }

    NodeId forward(Tape& t, const ViewFeatures& f) const {
        if (t.value(f.f2).dim(0) != c2_ || t.value(f.f1).dim(0) != c1_ || t.value(f.f4).dim(0) != c4_)
            throw std::invalid_argument("fusion: pyramid channel widths do not match the configuration");
        NodeId a = ops::relu(t, up3_(t, f.f3));                    // eighth scale
        NodeId b = ops::concat_axis0(t, {a, f.f2});
        NodeId c = ops::relu(t, up2_(t, b));                       // quarter scale
        NodeId d = ops::concat_axis0(t, {c, f.f1});
        NodeId e = ops::relu(t, mix_(t, d));
        return ops::concat_axis0(t, {e, f.f4});
    }

private:
    int64_t c1_, c2_, c4_;
    TransposeConv2dLayer up3_, up2_;
    Conv2dLayer mix_;
};

}  // namespace stereomamba
