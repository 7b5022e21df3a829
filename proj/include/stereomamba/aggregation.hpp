// SPDX-License-Identifier: Apache-2.0
//
// Cost aggregation over the quarter-resolution correlation volume: a pre-mix
// block, three stacked hourglasses (or flat stacks when the disparity extent
// cannot be halved twice), and four prediction heads. Head outputs are lifted
// to full resolution with an origin-aligned x4 trilinear upsample whose
// disparity axis expansion keeps cell k at quarter scale coincident with cell
// 4k at full scale, so the soft arg-min expectation reads out in full-image
// pixels directly.

#pragma once

#include "stereomamba/fusion.hpp"

namespace stereomamba::ops {

// x [D, H, W] -> [4D, 4H, 4W]; src = dst / 4 with edge clamping
inline NodeId upsample3d_x4(Tape& t, NodeId x) {
    const Tensor& v = t.value(x);
    if (v.rank() != 3)
        throw std::invalid_argument("upsample3d_x4: need [D, H, W], got " + shape_str(v.shape()));
    struct AxisTab {
        std::vector<int64_t> lo, hi;
        std::vector<double> w;
    };
    auto make_tab = [](int64_t in) {
        AxisTab tab;
        const int64_t out = in * 4;
        tab.lo.resize(static_cast<size_t>(out));
        tab.hi.resize(static_cast<size_t>(out));
        tab.w.resize(static_cast<size_t>(out));
        for (int64_t d = 0; d < out; ++d) {
            double src = static_cast<double>(d) / 4.0;
            int64_t lo = static_cast<int64_t>(src);  // src >= 0
            if (lo >= in - 1) {
                tab.lo[static_cast<size_t>(d)] = in - 1;
                tab.hi[static_cast<size_t>(d)] = in - 1;
                tab.w[static_cast<size_t>(d)] = 0.0;
            } else {
                tab.lo[static_cast<size_t>(d)] = lo;
                tab.hi[static_cast<size_t>(d)] = lo + 1;
                tab.w[static_cast<size_t>(d)] = src - static_cast<double>(lo);
            }
        }
        return tab;
    };
    const int64_t di = v.dim(0), hi = v.dim(1), wi = v.dim(2);
    AxisTab tz = make_tab(di), ty = make_tab(hi), tx = make_tab(wi);
    const int64_t od = di * 4, oh = hi * 4, ow = wi * 4;
    Tensor out({od, oh, ow});
    for (int64_t z = 0; z < od; ++z) {
        const int64_t z0 = tz.lo[static_cast<size_t>(z)], z1 = tz.hi[static_cast<size_t>(z)];
        const double wz = tz.w[static_cast<size_t>(z)];
        for (int64_t y = 0; y < oh; ++y) {
            const int64_t y0 = ty.lo[static_cast<size_t>(y)], y1 = ty.hi[static_cast<size_t>(y)];
            const double wy = ty.w[static_cast<size_t>(y)];
            for (int64_t x = 0; x < ow; ++x) {
                const int64_t x0 = tx.lo[static_cast<size_t>(x)], x1 = tx.hi[static_cast<size_t>(x)];
                const double wx = tx.w[static_cast<size_t>(x)];
                auto s = [&](int64_t a, int64_t b, int64_t c) { return v[(a * hi + b) * wi + c]; };
                double v00 = s(z0, y0, x0) * (1 - wx) + s(z0, y0, x1) * wx;
                double v01 = s(z0, y1, x0) * (1 - wx) + s(z0, y1, x1) * wx;
                double v10 = s(z1, y0, x0) * (1 - wx) + s(z1, y0, x1) * wx;
                double v11 = s(z1, y1, x0) * (1 - wx) + s(z1, y1, x1) * wx;
                out[(z * oh + y) * ow + x] =
                    (v00 * (1 - wy) + v01 * wy) * (1 - wz) + (v10 * (1 - wy) + v11 * wy) * wz;
            }
        }
    }
    return t.push(std::move(out), {x},
                  [x, tz, ty, tx, di, hi, wi, od, oh, ow, self = t.node_count()](Tape& tp) {
                      const Tensor& g = tp.grad(static_cast<NodeId>(self));
                      Tensor* gx = tp.grad_ptr(x);
                      if (!gx) return;
                      for (int64_t z = 0; z < od; ++z) {
                          const int64_t z0 = tz.lo[static_cast<size_t>(z)], z1 = tz.hi[static_cast<size_t>(z)];
                          const double wz = tz.w[static_cast<size_t>(z)];
                          for (int64_t y = 0; y < oh; ++y) {
                              const int64_t y0 = ty.lo[static_cast<size_t>(y)],
                                            y1 = ty.hi[static_cast<size_t>(y)];
                              const double wy = ty.w[static_cast<size_t>(y)];
                              for (int64_t x2 = 0; x2 < ow; ++x2) {
                                  const int64_t x0 = tx.lo[static_cast<size_t>(x2)],
                                                x1 = tx.hi[static_cast<size_t>(x2)];
                                  const double wx = tx.w[static_cast<size_t>(x2)];
                                  const double go = g[(z * oh + y) * ow + x2];
                                  if (go == 0.0) continue;
                                  auto acc = [&](int64_t a, int64_t b, int64_t c, double wgt) {
                                      (*gx)[(a * hi + b) * wi + c] += go * wgt;
                                  };
                                  acc(z0, y0, x0, (1 - wz) * (1 - wy) * (1 - wx));
                                  acc(z0, y0, x1, (1 - wz) * (1 - wy) * wx);
                                  acc(z0, y1, x0, (1 - wz) * wy * (1 - wx));
                                  acc(z0, y1, x1, (1 - wz) * wy * wx);
                                  acc(z1, y0, x0, wz * (1 - wy) * (1 - wx));
                                  acc(z1, y0, x1, wz * (1 - wy) * wx);
                                  acc(z1, y1, x0, wz * wy * (1 - wx));
                                  acc(z1, y1, x1, wz * wy * wx);
                              }
                          }
                      }
                  });
}

}  // namespace stereomamba::ops

namespace stereomamba {

// volume cost [D_q, H_q, W_q] -> full-resolution disparity [4H_q, 4W_q] in px
inline NodeId disparity_regression(Tape& t, NodeId cost_q) {
    NodeId up = ops::upsample3d_x4(t, cost_q);
    NodeId p = ops::softmax_axis0(t, ops::scale(t, up, -1.0));
    return ops::index_expectation_axis0(t, p);
}

struct Hourglass {
    Conv3dLayer down1, down2;
    TransposeConv3dLayer up1, up2;

    Hourglass(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t c)
        : down1(reg, seed, prefix + ".d1", c, 2 * c, 3, 2, 1),
          down2(reg, seed, prefix + ".d2", 2 * c, 2 * c, 3, 2, 1),
          up1(reg, seed, prefix + ".u1", 2 * c, 2 * c, 2, 2, 0),
          up2(reg, seed, prefix + ".u2", 2 * c, c, 2, 2, 0) {}

    NodeId operator()(Tape& t, NodeId x) const {
        NodeId d1 = ops::relu(t, down1(t, x));
        NodeId d2 = ops::relu(t, down2(t, d1));
        NodeId u1 = ops::relu(t, ops::add(t, up1(t, d2), d1));
        return ops::add(t, up2(t, u1), x);
    }
};

struct FlatStack {
    Conv3dLayer a, b;

    FlatStack(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t c)
        : a(reg, seed, prefix + ".a", c, c, 3, 1, 1), b(reg, seed, prefix + ".b", c, c, 3, 1, 1) {}

    NodeId operator()(Tape& t, NodeId x) const {
        return ops::add(t, b(t, ops::relu(t, a(t, x))), x);
    }
};

struct PredictionHead {
    Conv3dLayer squeeze, score;

    PredictionHead(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t c)
        : squeeze(reg, seed, prefix + ".sq", c, c / 2, 3, 1, 1),
          score(reg, seed, prefix + ".sc", c / 2, 1, 3, 1, 1) {}

    // [c, D, H, W] -> [D, H, W]
    NodeId operator()(Tape& t, NodeId x) const {
        NodeId y = score(t, ops::relu(t, squeeze(t, x)));
        const Tensor& v = t.value(y);
        return ops::reshape(t, y, {v.dim(1), v.dim(2), v.dim(3)});
    }
};

class CostAggregation {
public:
    // the trunk layout is fixed once from the quarter disparity extent: the
    // hourglass needs two clean halvings of the disparity axis
    CostAggregation(ParamRegistry& reg, uint64_t seed, int64_t in_groups, int64_t base, int64_t d_q)
        : use_hourglass_(d_q >= 4 && d_q % 4 == 0),
          pre1_(reg, seed, "agg.pre1", in_groups, base, 3, 1, 1),
          pre2_(reg, seed, "agg.pre2", base, base, 3, 1, 1) {
        if (base < 2 || base % 2 != 0)
            throw std::invalid_argument("aggregation: base width must be even and >= 2, got " +
                                        std::to_string(base));
        for (int i = 0; i < 3; ++i) {
            std::string p = "agg.block" + std::to_string(i);
            if (use_hourglass_)
                hg_.emplace_back(reg, seed, p, base);
            else
                flat_.emplace_back(reg, seed, p, base);
        }
        for (int i = 0; i < 4; ++i)
            heads_.emplace_back(reg, seed, "agg.head" + std::to_string(i), base);
    }

    bool hourglass() const { return use_hourglass_; }

    // quarter-scale cost stacks, one per head (all four, or just the last)
    std::vector<NodeId> forward(Tape& t, NodeId volume, bool all_heads) const {
        const Tensor& v = t.value(volume);
        if (v.rank() != 4)
            throw std::invalid_argument("aggregation: want volume [groups, D, H, W], got " +
                                        shape_str(v.shape()));
        if (use_hourglass_ && (v.dim(2) % 4 != 0 || v.dim(3) % 4 != 0))
            throw std::invalid_argument("aggregation: spatial extents must be divisible by 4, got " +
                                        shape_str(v.shape()));
        NodeId x0 = ops::relu(t, pre2_(t, ops::relu(t, pre1_(t, volume))));
        std::vector<NodeId> trunk{x0};
        NodeId x = x0;
        for (int i = 0; i < 3; ++i) {
            x = use_hourglass_ ? hg_[static_cast<size_t>(i)](t, x) : flat_[static_cast<size_t>(i)](t, x);
            trunk.push_back(x);
        }
        std::vector<NodeId> costs;
        for (size_t i = all_heads ? 0 : 3; i < 4; ++i) costs.push_back(heads_[i](t, trunk[i]));
        return costs;
    }

private:
    bool use_hourglass_;
    Conv3dLayer pre1_, pre2_;
    std::vector<Hourglass> hg_;
    std::vector<FlatStack> flat_;
    std::vector<PredictionHead> heads_;
};

}  // namespace stereomamba
