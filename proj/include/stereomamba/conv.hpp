// SPDX-License-Identifier: Apache-2.0
//
// Convolution family: dense 2-d/3-d conv, depthwise 2-d conv and transposed
// conv, all routed through im2col + gemm. A transposed conv forward IS the
// input-gradient routine of the matching conv, so the three linear primitives
// (forward, input-grad, weight-grad) are shared between both op types.
//
// Kernel layout convention: [C_upper, C_lower, k...] where "upper" is the
// side with more channels-per-position in the conv direction. A conv maps
// lower -> upper with weight [C_out, C_in, k...]; a transposed conv maps
// upper -> lower with the same layout read as [C_in, C_out, k...].

#pragma once

#include <algorithm>
#include <vector>

#include "stereomamba/ops.hpp"

namespace stereomamba::ops {

namespace conv_detail {

inline int64_t conv_extent(int64_t in, int64_t k, int64_t s, int64_t p) {
    return (in + 2 * p - k) / s + 1;
}

inline int64_t tconv_extent(int64_t in, int64_t k, int64_t s, int64_t p) {
    return (in - 1) * s + k - 2 * p;
}

inline std::vector<double>& scratch() {
    thread_local std::vector<double> buf;
    return buf;
}

// ---- 2-d geometry -------------------------------------------------------

struct Geom2d {
    int64_t cin, h, w;      // lower-side map
    int64_t cout, kh, kw;   // upper-side channels, kernel
    int64_t s, p;
    int64_t ho, wo;         // upper-side grid
};

inline bool unit_kernel(const Geom2d& g) { return g.kh == 1 && g.kw == 1 && g.s == 1 && g.p == 0; }

// col layout [cin*kh*kw, ho*wo], row r = (c*kh+i)*kw+j
inline void im2col(const double* x, const Geom2d& g, double* col) {
    const int64_t t = g.ho * g.wo;
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t i = 0; i < g.kh; ++i)
            for (int64_t j = 0; j < g.kw; ++j) {
                double* row = col + ((c * g.kh + i) * g.kw + j) * t;
                for (int64_t oy = 0; oy < g.ho; ++oy) {
                    int64_t iy = oy * g.s - g.p + i;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(row + oy * g.wo, row + (oy + 1) * g.wo, 0.0);
                        continue;
                    }
                    const double* xr = x + (c * g.h + iy) * g.w;
                    for (int64_t ox = 0; ox < g.wo; ++ox) {
                        int64_t ix = ox * g.s - g.p + j;
                        row[oy * g.wo + ox] = (ix >= 0 && ix < g.w) ? xr[ix] : 0.0;
                    }
                }
            }
}

inline void col2im_acc(const double* col, const Geom2d& g, double* x) {
    const int64_t t = g.ho * g.wo;
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t i = 0; i < g.kh; ++i)
            for (int64_t j = 0; j < g.kw; ++j) {
                const double* row = col + ((c * g.kh + i) * g.kw + j) * t;
                for (int64_t oy = 0; oy < g.ho; ++oy) {
                    int64_t iy = oy * g.s - g.p + i;
                    if (iy < 0 || iy >= g.h) continue;
                    double* xr = x + (c * g.h + iy) * g.w;
                    for (int64_t ox = 0; ox < g.wo; ++ox) {
                        int64_t ix = ox * g.s - g.p + j;
                        if (ix >= 0 && ix < g.w) xr[ix] += row[oy * g.wo + ox];
                    }
                }
            }
}

// upper = W_mat * col(lower); acc selects += vs =
inline void fwd(const double* lower, const double* weight, const Geom2d& g, double* upper, bool acc) {
    const int64_t t = g.ho * g.wo;
    const int64_t krows = g.cin * g.kh * g.kw;
    const double* colp;
    if (unit_kernel(g)) {
        colp = lower;
    } else {
        auto& buf = scratch();
        buf.resize(static_cast<size_t>(krows * t));
        im2col(lower, g, buf.data());
        colp = buf.data();
    }
    ConstMatMap wm(weight, g.cout, krows), cm(colp, krows, t);
    MatMap um(upper, g.cout, t);
    if (acc)
        um.noalias() += wm * cm;
    else
        um.noalias() = wm * cm;
}

// lower += col2im(W_mat^T * upper)
inline void igrad_acc(const double* upper, const double* weight, const Geom2d& g, double* lower) {
    const int64_t t = g.ho * g.wo;
    const int64_t krows = g.cin * g.kh * g.kw;
    ConstMatMap wm(weight, g.cout, krows), um(upper, g.cout, t);
    if (unit_kernel(g)) {
        MatMap lm(lower, krows, t);
        lm.noalias() += wm.transpose() * um;
        return;
    }
    auto& buf = scratch();
    buf.resize(static_cast<size_t>(krows * t));
    MatMap cm(buf.data(), krows, t);
    cm.noalias() = wm.transpose() * um;
    col2im_acc(buf.data(), g, lower);
}

// gw += upper * col(lower)^T
inline void wgrad_acc(const double* upper, const double* lower, const Geom2d& g, double* gw) {
    const int64_t t = g.ho * g.wo;
    const int64_t krows = g.cin * g.kh * g.kw;
    const double* colp;
    if (unit_kernel(g)) {
        colp = lower;
    } else {
        auto& buf = scratch();
        buf.resize(static_cast<size_t>(krows * t));
        im2col(lower, g, buf.data());
        colp = buf.data();
    }
    ConstMatMap um(upper, g.cout, t), cm(colp, krows, t);
    MatMap gwm(gw, g.cout, krows);
    gwm.noalias() += um * cm.transpose();
}

// ---- 3-d geometry (volumes [C, D, H, W]) --------------------------------

struct Geom3d {
    int64_t cin, d, h, w;
    int64_t cout, kd, kh, kw;
    int64_t s, p;
    int64_t od, oh, ow;
};

inline void im2col(const double* x, const Geom3d& g, double* col) {
    const int64_t t = g.od * g.oh * g.ow;
    int64_t r = 0;
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t kz = 0; kz < g.kd; ++kz)
            for (int64_t i = 0; i < g.kh; ++i)
                for (int64_t j = 0; j < g.kw; ++j, ++r) {
                    double* row = col + r * t;
                    for (int64_t oz = 0; oz < g.od; ++oz) {
                        int64_t iz = oz * g.s - g.p + kz;
                        if (iz < 0 || iz >= g.d) {
                            std::fill(row + oz * g.oh * g.ow, row + (oz + 1) * g.oh * g.ow, 0.0);
                            continue;
                        }
                        for (int64_t oy = 0; oy < g.oh; ++oy) {
                            int64_t iy = oy * g.s - g.p + i;
                            double* rr = row + (oz * g.oh + oy) * g.ow;
                            if (iy < 0 || iy >= g.h) {
                                std::fill(rr, rr + g.ow, 0.0);
                                continue;
                            }
                            const double* xr = x + ((c * g.d + iz) * g.h + iy) * g.w;
                            for (int64_t ox = 0; ox < g.ow; ++ox) {
                                int64_t ix = ox * g.s - g.p + j;
                                rr[ox] = (ix >= 0 && ix < g.w) ? xr[ix] : 0.0;
                            }
                        }
                    }
                }
}

inline void col2im_acc(const double* col, const Geom3d& g, double* x) {
    const int64_t t = g.od * g.oh * g.ow;
    int64_t r = 0;
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t kz = 0; kz < g.kd; ++kz)
            for (int64_t i = 0; i < g.kh; ++i)
                for (int64_t j = 0; j < g.kw; ++j, ++r) {
                    const double* row = col + r * t;
                    for (int64_t oz = 0; oz < g.od; ++oz) {
                        int64_t iz = oz * g.s - g.p + kz;
                        if (iz < 0 || iz >= g.d) continue;
                        for (int64_t oy = 0; oy < g.oh; ++oy) {
                            int64_t iy = oy * g.s - g.p + i;
                            if (iy < 0 || iy >= g.h) continue;
                            const double* rr = row + (oz * g.oh + oy) * g.ow;
                            double* xr = x + ((c * g.d + iz) * g.h + iy) * g.w;
                            for (int64_t ox = 0; ox < g.ow; ++ox) {
                                int64_t ix = ox * g.s - g.p + j;
                                if (ix >= 0 && ix < g.w) xr[ix] += rr[ox];
                            }
                        }
                    }
                }
}

inline void fwd(const double* lower, const double* weight, const Geom3d& g, double* upper, bool acc) {
    const int64_t t = g.od * g.oh * g.ow;
    const int64_t krows = g.cin * g.kd * g.kh * g.kw;
    auto& buf = scratch();
    buf.resize(static_cast<size_t>(krows * t));
    im2col(lower, g, buf.data());
    ConstMatMap wm(weight, g.cout, krows), cm(buf.data(), krows, t);
    MatMap um(upper, g.cout, t);
    if (acc)
        um.noalias() += wm * cm;
    else
        um.noalias() = wm * cm;
}

inline void igrad_acc(const double* upper, const double* weight, const Geom3d& g, double* lower) {
    const int64_t t = g.od * g.oh * g.ow;
    const int64_t krows = g.cin * g.kd * g.kh * g.kw;
    auto& buf = scratch();
    buf.resize(static_cast<size_t>(krows * t));
    ConstMatMap wm(weight, g.cout, krows), um(upper, g.cout, t);
    MatMap cm(buf.data(), krows, t);
    cm.noalias() = wm.transpose() * um;
    col2im_acc(buf.data(), g, lower);
}

inline void wgrad_acc(const double* upper, const double* lower, const Geom3d& g, double* gw) {
    const int64_t t = g.od * g.oh * g.ow;
    const int64_t krows = g.cin * g.kd * g.kh * g.kw;
    auto& buf = scratch();
    buf.resize(static_cast<size_t>(krows * t));
    im2col(lower, g, buf.data());
    ConstMatMap um(upper, g.cout, t), cm(buf.data(), krows, t);
    MatMap gwm(gw, g.cout, krows);
    gwm.noalias() += um * cm.transpose();
}

inline void check_pos(int64_t v, const char* op, const char* what) {
    if (v < 1)
        throw std::invalid_argument(std::string(op) + ": computed " + what + " extent " +
                                    std::to_string(v) + " < 1");
}

}  // namespace conv_detail

// ---------------------------------------------------------------------------
// taped ops

// x [Cin, H, W], w [Cout, Cin, kh, kw], b [Cout] -> [Cout, Ho, Wo]
inline NodeId conv2d(Tape& t, NodeId x, NodeId w, NodeId b, int64_t stride, int64_t pad) {
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    const Tensor& vb = t.value(b);
    if (vx.rank() != 3 || vw.rank() != 4)
        throw std::invalid_argument("conv2d: expected map rank 3 and kernel rank 4, got " +
                                    shape_str(vx.shape()) + " and " + shape_str(vw.shape()));
    if (vw.dim(1) != vx.dim(0))
        throw std::invalid_argument("conv2d: kernel " + shape_str(vw.shape()) +
                                    " does not accept input " + shape_str(vx.shape()));
    if (vb.size() != vw.dim(0))
        throw std::invalid_argument("conv2d: bias size " + std::to_string(vb.size()) +
                                    " != out channels " + std::to_string(vw.dim(0)));
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
    conv_detail::Geom2d g{vx.dim(0), vx.dim(1), vx.dim(2), vw.dim(0), vw.dim(2), vw.dim(3),
                          stride,    pad,       0,         0};
    g.ho = conv_detail::conv_extent(g.h, g.kh, g.s, g.p);
    g.wo = conv_detail::conv_extent(g.w, g.kw, g.s, g.p);
    conv_detail::check_pos(g.ho, "conv2d", "output height");
    conv_detail::check_pos(g.wo, "conv2d", "output width");
    Tensor out({g.cout, g.ho, g.wo});
    conv_detail::fwd(vx.data(), vw.data(), g, out.data(), false);
    const int64_t tt = g.ho * g.wo;
    for (int64_t c = 0; c < g.cout; ++c)
        for (int64_t i = 0; i < tt; ++i) out[c * tt + i] += vb[c];
    return t.push(std::move(out), {x, w, b}, [x, w, b, g, tt, self = t.node_count()](Tape& tp) {
        const Tensor& gy = tp.grad(static_cast<NodeId>(self));
        if (Tensor* gw = tp.grad_ptr(w))
            conv_detail::wgrad_acc(gy.data(), tp.value(x).data(), g, gw->data());
        if (Tensor* gx = tp.grad_ptr(x)) conv_detail::igrad_acc(gy.data(), tp.value(w).data(), g, gx->data());
        if (Tensor* gb = tp.grad_ptr(b))
            for (int64_t c = 0; c < g.cout; ++c) {
                double acc = 0.0;
                for (int64_t i = 0; i < tt; ++i) acc += gy[c * tt + i];
                (*gb)[c] += acc;
            }
    });
}

// x [C_up, H, W], w [C_up, C_low, kh, kw], b [C_low] -> [C_low, (H-1)s+kh-2p, (W-1)s+kw-2p]
inline NodeId transpose2d(Tape& t, NodeId x, NodeId w, NodeId b, int64_t stride, int64_t pad) {
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    const Tensor& vb = t.value(b);
    if (vx.rank() != 3 || vw.rank() != 4)
        throw std::invalid_argument("transpose2d: expected map rank 3 and kernel rank 4, got " +
                                    shape_str(vx.shape()) + " and " + shape_str(vw.shape()));
    if (vw.dim(0) != vx.dim(0))
        throw std::invalid_argument("transpose2d: kernel " + shape_str(vw.shape()) +
                                    " does not accept input " + shape_str(vx.shape()));
    if (vb.size() != vw.dim(1))
        throw std::invalid_argument("transpose2d: bias size " + std::to_string(vb.size()) +
                                    " != out channels " + std::to_string(vw.dim(1)));
    if (stride < 1 || pad < 0) throw std::invalid_argument("transpose2d: bad stride/pad");
    int64_t oh = conv_detail::tconv_extent(vx.dim(1), vw.dim(2), stride, pad);
    int64_t ow = conv_detail::tconv_extent(vx.dim(2), vw.dim(3), stride, pad);
    conv_detail::check_pos(oh, "transpose2d", "output height");
    conv_detail::check_pos(ow, "transpose2d", "output width");
    // the *lower* grid is the tconv output; the upper grid is its input
    conv_detail::Geom2d g{vw.dim(1), oh,  ow, vx.dim(0), vw.dim(2), vw.dim(3),
                          stride,    pad, vx.dim(1), vx.dim(2)};
    Tensor out({g.cin, g.h, g.w});
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t i = 0; i < g.h * g.w; ++i) out[c * g.h * g.w + i] = vb[c];
    conv_detail::igrad_acc(vx.data(), vw.data(), g, out.data());
    return t.push(std::move(out), {x, w, b}, [x, w, b, g, self = t.node_count()](Tape& tp) {
        const Tensor& gy = tp.grad(static_cast<NodeId>(self));
        if (Tensor* gw = tp.grad_ptr(w))
            conv_detail::wgrad_acc(tp.value(x).data(), gy.data(), g, gw->data());
        if (Tensor* gx = tp.grad_ptr(x)) conv_detail::fwd(gy.data(), tp.value(w).data(), g, gx->data(), true);
        if (Tensor* gb = tp.grad_ptr(b))
            for (int64_t c = 0; c < g.cin; ++c) {
                double acc = 0.0;
                for (int64_t i = 0; i < g.h * g.w; ++i) acc += gy[c * g.h * g.w + i];
                (*gb)[c] += acc;
            }
    });
}

// x [C, H, W], w [C, kh, kw], b [C]; per-channel conv
inline NodeId depthwise2d(Tape& t, NodeId x, NodeId w, NodeId b, int64_t stride, int64_t pad) {
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    const Tensor& vb = t.value(b);
    if (vx.rank() != 3 || vw.rank() != 3)
        throw std::invalid_argument("depthwise2d: expected map rank 3 and kernel rank 3, got " +
                                    shape_str(vx.shape()) + " and " + shape_str(vw.shape()));
    if (vw.dim(0) != vx.dim(0) || vb.size() != vx.dim(0))
        throw std::invalid_argument("depthwise2d: channel mismatch, map " + shape_str(vx.shape()) +
                                    " kernel " + shape_str(vw.shape()));
    const int64_t C = vx.dim(0), H = vx.dim(1), W = vx.dim(2), kh = vw.dim(1), kw = vw.dim(2);
    const int64_t ho = conv_detail::conv_extent(H, kh, stride, pad);
    const int64_t wo = conv_detail::conv_extent(W, kw, stride, pad);
    conv_detail::check_pos(ho, "depthwise2d", "output height");
    conv_detail::check_pos(wo, "depthwise2d", "output width");
    Tensor out({C, ho, wo});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                double acc = vb[c];
                for (int64_t i = 0; i < kh; ++i) {
                    int64_t iy = oy * stride - pad + i;
                    if (iy < 0 || iy >= H) continue;
                    for (int64_t j = 0; j < kw; ++j) {
                        int64_t ix = ox * stride - pad + j;
                        if (ix >= 0 && ix < W) acc += vw.at(c, i, j) * vx.at(c, iy, ix);
                    }
                }
                out.at(c, oy, ox) = acc;
            }
    return t.push(std::move(out), {x, w, b},
                  [x, w, b, C, H, W, kh, kw, ho, wo, stride, pad, self = t.node_count()](Tape& tp) {
                      const Tensor& gy = tp.grad(static_cast<NodeId>(self));
                      const Tensor& vx = tp.value(x);
                      const Tensor& vw = tp.value(w);
                      Tensor* gx = tp.grad_ptr(x);
                      Tensor* gw = tp.grad_ptr(w);
                      Tensor* gb = tp.grad_ptr(b);
                      for (int64_t c = 0; c < C; ++c)
                          for (int64_t oy = 0; oy < ho; ++oy)
                              for (int64_t ox = 0; ox < wo; ++ox) {
                                  double g = gy[(c * ho + oy) * wo + ox];
                                  if (gb) (*gb)[c] += g;
                                  for (int64_t i = 0; i < kh; ++i) {
                                      int64_t iy = oy * stride - pad + i;
                                      if (iy < 0 || iy >= H) continue;
                                      for (int64_t j = 0; j < kw; ++j) {
                                          int64_t ix = ox * stride - pad + j;
                                          if (ix < 0 || ix >= W) continue;
                                          if (gw) (*gw)[(c * kh + i) * kw + j] += g * vx.at(c, iy, ix);
                                          if (gx) (*gx)[(c * H + iy) * W + ix] += g * vw.at(c, i, j);
                                      }
                                  }
                              }
                  });
}

// x [Cin, D, H, W], w [Cout, Cin, kd, kh, kw], b [Cout]
inline NodeId conv3d(Tape& t, NodeId x, NodeId w, NodeId b, int64_t stride, int64_t pad) {
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    const Tensor& vb = t.value(b);
    if (vx.rank() != 4 || vw.rank() != 5)
        throw std::invalid_argument("conv3d: expected volume rank 4 and kernel rank 5, got " +
                                    shape_str(vx.shape()) + " and " + shape_str(vw.shape()));
    if (vw.dim(1) != vx.dim(0))
        throw std::invalid_argument("conv3d: kernel " + shape_str(vw.shape()) +
                                    " does not accept input " + shape_str(vx.shape()));
    if (vb.size() != vw.dim(0))
        throw std::invalid_argument("conv3d: bias size " + std::to_string(vb.size()) +
                                    " != out channels " + std::to_string(vw.dim(0)));
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv3d: bad stride/pad");
    conv_detail::Geom3d g{};
    g.cin = vx.dim(0);
    g.d = vx.dim(1);
    g.h = vx.dim(2);
    g.w = vx.dim(3);
    g.cout = vw.dim(0);
    g.kd = vw.dim(2);
    g.kh = vw.dim(3);
    g.kw = vw.dim(4);
    g.s = stride;
    g.p = pad;
    g.od = conv_detail::conv_extent(g.d, g.kd, g.s, g.p);
    g.oh = conv_detail::conv_extent(g.h, g.kh, g.s, g.p);
    g.ow = conv_detail::conv_extent(g.w, g.kw, g.s, g.p);
    conv_detail::check_pos(g.od, "conv3d", "output depth");
    conv_detail::check_pos(g.oh, "conv3d", "output height");
    conv_detail::check_pos(g.ow, "conv3d", "output width");
    Tensor out({g.cout, g.od, g.oh, g.ow});
    conv_detail::fwd(vx.data(), vw.data(), g, out.data(), false);
    const int64_t tt = g.od * g.oh * g.ow;
    for (int64_t c = 0; c < g.cout; ++c)
        for (int64_t i = 0; i < tt; ++i) out[c * tt + i] += vb[c];
    return t.push(std::move(out), {x, w, b}, [x, w, b, g, tt, self = t.node_count()](Tape& tp) {
        const Tensor& gy = tp.grad(static_cast<NodeId>(self));
        if (Tensor* gw = tp.grad_ptr(w))
            conv_detail::wgrad_acc(gy.data(), tp.value(x).data(), g, gw->data());
        if (Tensor* gx = tp.grad_ptr(x)) conv_detail::igrad_acc(gy.data(), tp.value(w).data(), g, gx->data());
        if (Tensor* gb = tp.grad_ptr(b))
            for (int64_t c = 0; c < g.cout; ++c) {
                double acc = 0.0;
                for (int64_t i = 0; i < tt; ++i) acc += gy[c * tt + i];
                (*gb)[c] += acc;
            }
    });
}

// x [C_up, D, H, W], w [C_up, C_low, kd, kh, kw], b [C_low]
inline NodeId transpose3d(Tape& t, NodeId x, NodeId w, NodeId b, int64_t stride, int64_t pad) {
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    const Tensor& vb = t.value(b);
    if (vx.rank() != 4 || vw.rank() != 5)
        throw std::invalid_argument("transpose3d: expected volume rank 4 and kernel rank 5, got " +
                                    shape_str(vx.shape()) + " and " + shape_str(vw.shape()));
    if (vw.dim(0) != vx.dim(0))
        throw std::invalid_argument("transpose3d: kernel " + shape_str(vw.shape()) +
                                    " does not accept input " + shape_str(vx.shape()));
    if (vb.size() != vw.dim(1))
        throw std::invalid_argument("transpose3d: bias size " + std::to_string(vb.size()) +
                                    " != out channels " + std::to_string(vw.dim(1)));
    if (stride < 1 || pad < 0) throw std::invalid_argument("transpose3d: bad stride/pad");
    conv_detail::Geom3d g{};
    g.cin = vw.dim(1);
    g.d = conv_detail::tconv_extent(vx.dim(1), vw.dim(2), stride, pad);
    g.h = conv_detail::tconv_extent(vx.dim(2), vw.dim(3), stride, pad);
    g.w = conv_detail::tconv_extent(vx.dim(3), vw.dim(4), stride, pad);
    conv_detail::check_pos(g.d, "transpose3d", "output depth");
    conv_detail::check_pos(g.h, "transpose3d", "output height");
    conv_detail::check_pos(g.w, "transpose3d", "output width");
    g.cout = vx.dim(0);
    g.kd = vw.dim(2);
    g.kh = vw.dim(3);
    g.kw = vw.dim(4);
    g.s = stride;
    g.p = pad;
    g.od = vx.dim(1);
    g.oh = vx.dim(2);
    g.ow = vx.dim(3);
    Tensor out({g.cin, g.d, g.h, g.w});
    const int64_t per = g.d * g.h * g.w;
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t i = 0; i < per; ++i) out[c * per + i] = vb[c];
    conv_detail::igrad_acc(vx.data(), vw.data(), g, out.data());
    return t.push(std::move(out), {x, w, b}, [x, w, b, g, per, self = t.node_count()](Tape& tp) {
        const Tensor& gy = tp.grad(static_cast<NodeId>(self));
        if (Tensor* gw = tp.grad_ptr(w))
            conv_detail::wgrad_acc(tp.value(x).data(), gy.data(), g, gw->data());
        if (Tensor* gx = tp.grad_ptr(x)) conv_detail::fwd(gy.data(), tp.value(w).data(), g, gx->data(), true);
        if (Tensor* gb = tp.grad_ptr(b))
            for (int64_t c = 0; c < g.cin; ++c) {
                double acc = 0.0;
                for (int64_t i = 0; i < per; ++i) acc += gy[c * per + i];
                (*gb)[c] += acc;
            }
    });
}

}  // namespace stereomamba::ops
