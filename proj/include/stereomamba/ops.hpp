// SPDX-License-Identifier: Apache-2.0
//
// Taped elementwise, normalization, linear and structural ops. Each op
// validates shapes, computes the forward value and registers an exact adjoint.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stereomamba/tape.hpp"
#include "stereomamba/tensor.hpp"

namespace stereomamba::ops {

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenMat>;
using ConstMatMap = Eigen::Map<const EigenMat>;

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

inline void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite())
        throw std::invalid_argument(std::string(op) + ": non-finite input rejected");
}

// ---------------------------------------------------------------------------
// elementwise arithmetic

inline NodeId add(Tape& t, NodeId a, NodeId b) {
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    check_same_shape(va, vb, "add");
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    return t.push(std::move(out), {a, b}, [a, b, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        for (NodeId in : {a, b})
            if (Tensor* gi = tp.grad_ptr(in))
                for (int64_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
    });
}

inline NodeId sub(Tape& t, NodeId a, NodeId b) {
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    check_same_shape(va, vb, "sub");
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    return t.push(std::move(out), {a, b}, [a, b, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        if (Tensor* ga = tp.grad_ptr(a))
            for (int64_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (Tensor* gb = tp.grad_ptr(b))
            for (int64_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    });
}

inline NodeId mul(Tape& t, NodeId a, NodeId b) {
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    check_same_shape(va, vb, "mul");
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    return t.push(std::move(out), {a, b}, [a, b, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        const Tensor& va = tp.value(a);
        const Tensor& vb = tp.value(b);
        if (Tensor* ga = tp.grad_ptr(a))
            for (int64_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * vb[i];
        if (Tensor* gb = tp.grad_ptr(b))
            for (int64_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * va[i];
    });
}

inline NodeId scale(Tape& t, NodeId x, double c) {
    const Tensor& vx = t.value(x);
    Tensor out(vx.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = c * vx[i];
    return t.push(std::move(out), {x}, [x, c, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        if (Tensor* gx = tp.grad_ptr(x))
            for (int64_t i = 0; i < g.size(); ++i) (*gx)[i] += c * g[i];
    });
}

// y = s * x with s a taped scalar node
inline NodeId scale_by(Tape& t, NodeId x, NodeId s) {
    const Tensor& vx = t.value(x);
    const Tensor& vs = t.value(s);
    if (vs.size() != 1) throw std::invalid_argument("scale_by: scale must be a scalar node");
    Tensor out(vx.shape());
    double c = vs[0];
    for (int64_t i = 0; i < out.size(); ++i) out[i] = c * vx[i];
    return t.push(std::move(out), {x, s}, [x, s, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        const Tensor& vx = tp.value(x);
        double c = tp.value(s)[0];
        if (Tensor* gx = tp.grad_ptr(x))
            for (int64_t i = 0; i < g.size(); ++i) (*gx)[i] += c * g[i];
        if (Tensor* gs = tp.grad_ptr(s)) {
            double acc = 0.0;
            for (int64_t i = 0; i < g.size(); ++i) acc += g[i] * vx[i];
            (*gs)[0] += acc;
        }
    });
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities

namespace detail {

template <typename Fwd, typename Deriv>
NodeId pointwise(Tape& t, NodeId x, Fwd f, Deriv df) {
    const Tensor& vx = t.value(x);
    Tensor out(vx.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = f(vx[i]);
    return t.push(std::move(out), {x}, [x, df, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        const Tensor& vx = tp.value(x);
        if (Tensor* gx = tp.grad_ptr(x))
            for (int64_t i = 0; i < g.size(); ++i) (*gx)[i] += df(vx[i]) * g[i];
    });
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace detail

inline NodeId relu(Tape& t, NodeId x) {
    return detail::pointwise(
        t, x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline NodeId silu(Tape& t, NodeId x) {
    return detail::pointwise(
        t, x, [](double v) { return v * detail::sigmoid(v); },
        [](double v) {
            double s = detail::sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

// exact erf form
inline double gelu_value(double v) { return 0.5 * v * (1.0 + std::erf(v / M_SQRT2)); }

inline NodeId gelu(Tape& t, NodeId x) {
    return detail::pointwise(t, x, gelu_value, [](double v) {
        double cdf = 0.5 * (1.0 + std::erf(v / M_SQRT2));
        double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
        return cdf + v * pdf;
    });
}

inline double softplus_value(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

inline NodeId softplus(Tape& t, NodeId x) {
    return detail::pointwise(t, x, softplus_value, [](double v) { return detail::sigmoid(v); });
}

inline NodeId exp(Tape& t, NodeId x) {
    const Tensor& vx = t.value(x);
    Tensor out(vx.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(vx[i]);
    return t.push(std::move(out), {x}, [x, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        const Tensor& y = tp.value(static_cast<NodeId>(self));
        if (Tensor* gx = tp.grad_ptr(x))
            for (int64_t i = 0; i < g.size(); ++i) (*gx)[i] += y[i] * g[i];
    });
}

// ---------------------------------------------------------------------------
// softmax

namespace detail {

// softmax over contiguous rows of length `len`, `rows` of them, with an
// arbitrary stride pattern handled by the caller via index lists
inline void softmax_slices(const double* in, double* out, int64_t slices, int64_t len, int64_t stride,
                           int64_t base_step) {
    for (int64_t s = 0; s < slices; ++s) {
        const double* v = in + s * base_step;
        double* o = out + s * base_step;
        double m = v[0];
        for (int64_t i = 1; i < len; ++i) m = std::max(m, v[i * stride]);
        double sum = 0.0;
        for (int64_t i = 0; i < len; ++i) {
            double e = std::exp(v[i * stride] - m);
            o[i * stride] = e;
            sum += e;
        }
        for (int64_t i = 0; i < len; ++i) o[i * stride] /= sum;
    }
}

inline void softmax_backward_slices(const double* p, const double* g, double* gx, int64_t slices, int64_t len,
                                    int64_t stride, int64_t base_step) {
    for (int64_t s = 0; s < slices; ++s) {
        const double* ps = p + s * base_step;
        const double* gs = g + s * base_step;
        double* gxs = gx + s * base_step;
        double dot = 0.0;
        for (int64_t i = 0; i < len; ++i) dot += ps[i * stride] * gs[i * stride];
        for (int64_t i = 0; i < len; ++i) gxs[i * stride] += ps[i * stride] * (gs[i * stride] - dot);
    }
}

}  // namespace detail

inline NodeId softmax_lastdim(Tape& t, NodeId x) {
    const Tensor& vx = t.value(x);
    int64_t len = vx.dim(vx.rank() - 1);
    int64_t slices = vx.size() / len;
    Tensor out(vx.shape());
    detail::softmax_slices(vx.data(), out.data(), slices, len, 1, len);
    return t.push(std::move(out), {x}, [x, len, slices, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        const Tensor& p = tp.value(static_cast<NodeId>(self));
        if (Tensor* gx = tp.grad_ptr(x))
            detail::softmax_backward_slices(p.data(), g.data(), gx->data(), slices, len, 1, len);
    });
}

// softmax over the leading axis; used for the disparity dimension of [D, H, W].
// Swept row by row (contiguous in memory) rather than column by column: the
// leading-axis stride of a [D, H, W] volume defeats the cache otherwise.
inline NodeId softmax_axis0(Tape& t, NodeId x) {
    using CRow = Eigen::Map<const Eigen::ArrayXd>;
    using Row = Eigen::Map<Eigen::ArrayXd>;
    const Tensor& vx = t.value(x);
    int64_t len = vx.dim(0);
    int64_t inner = vx.size() / len;
    Tensor out(vx.shape());
    const double* in = vx.data();
    double* o = out.data();
    Eigen::ArrayXd m = CRow(in, inner);
    for (int64_t i = 1; i < len; ++i) m = m.max(CRow(in + i * inner, inner));
    Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(inner);
    for (int64_t i = 0; i < len; ++i) {
        Row oi(o + i * inner, inner);
        oi = (CRow(in + i * inner, inner) - m).exp();
        sum += oi;
    }
    for (int64_t i = 0; i < len; ++i) Row(o + i * inner, inner) /= sum;
    return t.push(std::move(out), {x}, [x, len, inner, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        const Tensor& p = tp.value(static_cast<NodeId>(self));
        if (Tensor* gx = tp.grad_ptr(x)) {
            Eigen::ArrayXd dot = Eigen::ArrayXd::Zero(inner);
            for (int64_t i = 0; i < len; ++i)
                dot += CRow(p.data() + i * inner, inner) * CRow(g.data() + i * inner, inner);
            for (int64_t i = 0; i < len; ++i)
                Row(gx->data() + i * inner, inner) +=
                    CRow(p.data() + i * inner, inner) * (CRow(g.data() + i * inner, inner) - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// normalization over one axis
//
// The normalized vector runs along `axis`; gain/bias have that axis's extent.
// Channel norms on [C, H, W] maps use axis 0, sequence norms on [T, C] axis 1.

namespace detail {

struct AxisGeom {
    int64_t len;     // extent of the normalized axis
    int64_t outer;   // product of extents before axis
    int64_t inner;   // product of extents after axis
};

inline AxisGeom axis_geom(const Shape& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw std::invalid_argument("norm axis out of range for shape " + shape_str(shape));
    AxisGeom g{shape[static_cast<size_t>(axis)], 1, 1};
    for (int i = 0; i < axis; ++i) g.outer *= shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) g.inner *= shape[static_cast<size_t>(i)];
    return g;
}

}  // namespace detail

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kRmsNormEps = 1e-6;

inline NodeId layer_norm(Tape& t, NodeId x, NodeId gain, NodeId bias, int axis) {
    const Tensor& vx = t.value(x);
    auto geom = detail::axis_geom(vx.shape(), axis);
    if (t.value(gain).size() != geom.len || t.value(bias).size() != geom.len)
        throw std::invalid_argument("layer_norm: gain/bias must have the normalized extent " +
                                    std::to_string(geom.len));
    const Tensor& vg = t.value(gain);
    const Tensor& vb = t.value(bias);
    Tensor out(vx.shape());
    Tensor xhat(vx.shape());       // saved for backward
    Tensor inv_sigma({geom.outer, geom.inner});
    for (int64_t o = 0; o < geom.outer; ++o)
        for (int64_t s = 0; s < geom.inner; ++s) {
            const double* v = vx.data() + o * geom.len * geom.inner + s;
            double mean = 0.0;
            for (int64_t i = 0; i < geom.len; ++i) mean += v[i * geom.inner];
            mean /= static_cast<double>(geom.len);
            double var = 0.0;
            for (int64_t i = 0; i < geom.len; ++i) {
                double d = v[i * geom.inner] - mean;
                var += d * d;
            }
            var /= static_cast<double>(geom.len);
            double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            inv_sigma.at(o, s) = inv;
            for (int64_t i = 0; i < geom.len; ++i) {
                double xh = (v[i * geom.inner] - mean) * inv;
                xhat.data()[o * geom.len * geom.inner + i * geom.inner + s] = xh;
                out.data()[o * geom.len * geom.inner + i * geom.inner + s] = xh * vg[i] + vb[i];
            }
        }
    return t.push(std::move(out), {x, gain, bias},
                  [x, gain, bias, geom, xhat, inv_sigma, self = t.node_count()](Tape& tp) {
                      const Tensor& g = tp.grad(static_cast<NodeId>(self));
                      const Tensor& vg = tp.value(gain);
                      Tensor* gx = tp.grad_ptr(x);
                      Tensor* gg = tp.grad_ptr(gain);
                      Tensor* gb = tp.grad_ptr(bias);
                      for (int64_t o = 0; o < geom.outer; ++o)
                          for (int64_t s = 0; s < geom.inner; ++s) {
                              const int64_t base = o * geom.len * geom.inner + s;
                              double mean_u = 0.0, mean_ux = 0.0;
                              for (int64_t i = 0; i < geom.len; ++i) {
                                  double u = vg[i] * g[base + i * geom.inner];
                                  mean_u += u;
                                  mean_ux += u * xhat[base + i * geom.inner];
                              }
                              mean_u /= static_cast<double>(geom.len);
                              mean_ux /= static_cast<double>(geom.len);
                              double inv = inv_sigma.at(o, s);
                              for (int64_t i = 0; i < geom.len; ++i) {
                                  double gi = g[base + i * geom.inner];
                                  double xh = xhat[base + i * geom.inner];
                                  if (gx)
                                      (*gx)[base + i * geom.inner] +=
                                          (vg[i] * gi - mean_u - xh * mean_ux) * inv;
                                  if (gg) (*gg)[i] += gi * xh;
                                  if (gb) (*gb)[i] += gi;
                              }
                          }
                  });
}

// y = x / sqrt(mean(x^2) + eps) * gain, eps inside the root
inline NodeId rms_norm(Tape& t, NodeId x, NodeId gain, int axis) {
    const Tensor& vx = t.value(x);
    auto geom = detail::axis_geom(vx.shape(), axis);
    if (t.value(gain).size() != geom.len)
        throw std::invalid_argument("rms_norm: gain must have the normalized extent " +
                                    std::to_string(geom.len));
    const Tensor& vg = t.value(gain);
    Tensor out(vx.shape());
    Tensor inv_rms({geom.outer, geom.inner});
    for (int64_t o = 0; o < geom.outer; ++o)
        for (int64_t s = 0; s < geom.inner; ++s) {
            const double* v = vx.data() + o * geom.len * geom.inner + s;
            double msq = 0.0;
            for (int64_t i = 0; i < geom.len; ++i) {
                double d = v[i * geom.inner];
                msq += d * d;
            }
            msq /= static_cast<double>(geom.len);
            double inv = 1.0 / std::sqrt(msq + kRmsNormEps);
            inv_rms.at(o, s) = inv;
            for (int64_t i = 0; i < geom.len; ++i)
                out.data()[o * geom.len * geom.inner + i * geom.inner + s] = v[i * geom.inner] * inv * vg[i];
        }
    return t.push(std::move(out), {x, gain}, [x, gain, geom, inv_rms, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        const Tensor& vx = tp.value(x);
        const Tensor& vg = tp.value(gain);
        Tensor* gx = tp.grad_ptr(x);
        Tensor* gg = tp.grad_ptr(gain);
        for (int64_t o = 0; o < geom.outer; ++o)
            for (int64_t s = 0; s < geom.inner; ++s) {
                const int64_t base = o * geom.len * geom.inner + s;
                double inv = inv_rms.at(o, s);
                double dot = 0.0;  // sum of g*gain*x
                for (int64_t i = 0; i < geom.len; ++i)
                    dot += g[base + i * geom.inner] * vg[i] * vx[base + i * geom.inner];
                for (int64_t i = 0; i < geom.len; ++i) {
                    double gi = g[base + i * geom.inner];
                    double xi = vx[base + i * geom.inner];
                    if (gx)
                        (*gx)[base + i * geom.inner] +=
                            vg[i] * gi * inv - xi * dot * inv * inv * inv / static_cast<double>(geom.len);
                    if (gg) (*gg)[i] += gi * xi * inv;
                }
            }
    });
}

// ---------------------------------------------------------------------------
// affine map over the trailing extent: y[..., m] = sum_k x[..., k] W[k, m] + b[m]

inline NodeId linear(Tape& t, NodeId x, NodeId weight, NodeId bias) {
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(weight);
    const Tensor& vb = t.value(bias);
    if (vw.rank() != 2)
        throw std::invalid_argument("linear: weight must be rank 2, got " + shape_str(vw.shape()));
    int64_t k = vx.dim(vx.rank() - 1);
    if (vw.dim(0) != k)
        throw std::invalid_argument("linear: input " + shape_str(vx.shape()) + " incompatible with weight " +
                                    shape_str(vw.shape()));
    int64_t m = vw.dim(1);
    if (vb.size() != m)
        throw std::invalid_argument("linear: bias must have extent " + std::to_string(m));
    int64_t rows = vx.size() / k;
    Shape out_shape = vx.shape();
    out_shape.back() = m;
    Tensor out(out_shape);
    ConstMatMap X(vx.data(), rows, k), W(vw.data(), k, m);
    MatMap Y(out.data(), rows, m);
    Y.noalias() = X * W;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < m; ++j) out.data()[r * m + j] += vb[j];
    return t.push(std::move(out), {x, weight, bias},
                  [x, weight, bias, rows, k, m, self = t.node_count()](Tape& tp) {
                      const Tensor& g = tp.grad(static_cast<NodeId>(self));
                      const Tensor& vx = tp.value(x);
                      const Tensor& vw = tp.value(weight);
                      ConstMatMap G(g.data(), rows, m), X(vx.data(), rows, k), W(vw.data(), k, m);
                      if (Tensor* gx = tp.grad_ptr(x)) {
                          MatMap GX(gx->data(), rows, k);
                          GX.noalias() += G * W.transpose();
                      }
                      if (Tensor* gw = tp.grad_ptr(weight)) {
                          MatMap GW(gw->data(), k, m);
                          GW.noalias() += X.transpose() * G;
                      }
                      if (Tensor* gb = tp.grad_ptr(bias))
                          for (int64_t r = 0; r < rows; ++r)
                              for (int64_t j = 0; j < m; ++j) (*gb)[j] += g[r * m + j];
                  });
}

// ---------------------------------------------------------------------------
// structural ops

inline NodeId reshape(Tape& t, NodeId x, Shape shape) {
    Tensor out = t.value(x).reshaped(shape);
    Shape orig = t.value(x).shape();
    return t.push(std::move(out), {x}, [x, orig, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        if (Tensor* gx = tp.grad_ptr(x))
            for (int64_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    });
}

namespace detail {

inline std::vector<int64_t> strides_of(const Shape& shape) {
    std::vector<int64_t> st(shape.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = acc;
        acc *= shape[static_cast<size_t>(i)];
    }
    return st;
}

// copy src into dst where dst axis j = src axis order[j]
inline void permute_copy(const Tensor& src, Tensor& dst, const std::vector<int>& order, bool accumulate) {
    auto sstr = strides_of(src.shape());
    const Shape& dshape = dst.shape();
    int rank = static_cast<int>(dshape.size());
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    const double* s = src.data();
    double* d = dst.data();
    int64_t n = src.size();
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t soff = 0;
        for (int j = 0; j < rank; ++j) soff += idx[static_cast<size_t>(j)] * sstr[static_cast<size_t>(order[static_cast<size_t>(j)])];
        if (accumulate)
            d[flat] += s[soff];
        else
            d[flat] = s[soff];
        for (int j = rank - 1; j >= 0; --j) {
            if (++idx[static_cast<size_t>(j)] < dshape[static_cast<size_t>(j)]) break;
            idx[static_cast<size_t>(j)] = 0;
        }
    }
}

}  // namespace detail

// out axis j has extent of input axis order[j]
inline NodeId permute(Tape& t, NodeId x, std::vector<int> order) {
    const Tensor& vx = t.value(x);
    if (static_cast<int>(order.size()) != vx.rank())
        throw std::invalid_argument("permute: order rank mismatch");
    Shape oshape(order.size());
    for (size_t j = 0; j < order.size(); ++j) oshape[j] = vx.dim(order[j]);
    Tensor out(oshape);
    detail::permute_copy(vx, out, order, false);
    return t.push(std::move(out), {x}, [x, order, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        if (Tensor* gx = tp.grad_ptr(x)) {
            // inverse permutation: gx axis order[j] receives g axis j
            std::vector<int> inv(order.size());
            for (size_t j = 0; j < order.size(); ++j) inv[static_cast<size_t>(order[j])] = static_cast<int>(j);
            detail::permute_copy(g, *gx, inv, true);
        }
    });
}

inline NodeId reverse_lastdim(Tape& t, NodeId x) {
    const Tensor& vx = t.value(x);
    int64_t len = vx.dim(vx.rank() - 1);
    int64_t slices = vx.size() / len;
    Tensor out(vx.shape());
    for (int64_t s = 0; s < slices; ++s)
        for (int64_t i = 0; i < len; ++i) out[s * len + i] = vx[s * len + (len - 1 - i)];
    return t.push(std::move(out), {x}, [x, len, slices, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        if (Tensor* gx = tp.grad_ptr(x))
            for (int64_t s = 0; s < slices; ++s)
                for (int64_t i = 0; i < len; ++i) (*gx)[s * len + (len - 1 - i)] += g[s * len + i];
    });
}

// concatenate along axis 0
inline NodeId concat_axis0(Tape& t, const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_axis0: no inputs");
    Shape tail = t.value(parts[0]).shape();
    int64_t total0 = 0;
    for (NodeId p : parts) {
        const Tensor& v = t.value(p);
        if (v.rank() != static_cast<int>(tail.size()))
            throw std::invalid_argument("concat_axis0: rank mismatch");
        for (size_t i = 1; i < tail.size(); ++i)
            if (v.dim(static_cast<int>(i)) != tail[i])
                throw std::invalid_argument("concat_axis0: trailing shape mismatch " + shape_str(v.shape()) +
                                            " vs " + shape_str(tail));
        total0 += v.dim(0);
    }
    Shape oshape = tail;
    oshape[0] = total0;
    Tensor out(oshape);
    int64_t offset = 0;
    std::vector<int64_t> offsets;
    for (NodeId p : parts) {
        const Tensor& v = t.value(p);
        offsets.push_back(offset);
        std::copy(v.data(), v.data() + v.size(), out.data() + offset);
        offset += v.size();
    }
    return t.push(std::move(out), parts, [parts, offsets, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        for (size_t i = 0; i < parts.size(); ++i)
            if (Tensor* gp = tp.grad_ptr(parts[i]))
                for (int64_t j = 0; j < gp->size(); ++j) (*gp)[j] += g[offsets[i] + j];
    });
}

// e[s] = sum_k k * p[k, s...]; collapses the leading axis of a distribution
// stack into its index expectation
inline NodeId index_expectation_axis0(Tape& t, NodeId p) {
    const Tensor& vp = t.value(p);
    if (vp.rank() < 2)
        throw std::invalid_argument("index_expectation_axis0: need rank >= 2, got " +
                                    shape_str(vp.shape()));
    const int64_t len = vp.dim(0);
    const int64_t inner = vp.size() / len;
    Shape oshape(vp.shape().begin() + 1, vp.shape().end());
    Tensor out = Tensor::zeros(oshape);
    for (int64_t k = 0; k < len; ++k)
        for (int64_t s = 0; s < inner; ++s) out[s] += static_cast<double>(k) * vp[k * inner + s];
    return t.push(std::move(out), {p}, [p, len, inner, self = t.node_count()](Tape& tp) {
        const Tensor& g = tp.grad(static_cast<NodeId>(self));
        if (Tensor* gp = tp.grad_ptr(p))
            for (int64_t k = 0; k < len; ++k)
                for (int64_t s = 0; s < inner; ++s) (*gp)[k * inner + s] += static_cast<double>(k) * g[s];
    });
}

// mean over mask-selected pixels of the smooth L1 penalty against a fixed
// target; the quadratic zone is |r| < 1. Gradient is the analytic clamp.
inline NodeId smooth_l1_masked_mean(Tape& t, NodeId pred, const Tensor& target, const Tensor& mask) {
    const Tensor& vp = t.value(pred);
    check_same_shape(vp, target, "smooth_l1_masked_mean");
    check_same_shape(vp, mask, "smooth_l1_masked_mean");
    int64_t valid = 0;
    double acc = 0.0;
    for (int64_t i = 0; i < vp.size(); ++i) {
        if (mask[i] == 0.0) continue;
        ++valid;
        double r = vp[i] - target[i];
        acc += std::abs(r) < 1.0 ? 0.5 * r * r : std::abs(r) - 0.5;
    }
    if (valid == 0) return t.constant(Tensor::scalar(0.0));  // nothing to supervise
    Tensor out = Tensor::scalar(acc / static_cast<double>(valid));
    return t.push(std::move(out), {pred}, [pred, target, mask, valid, self = t.node_count()](Tape& tp) {
        const double g = tp.grad(static_cast<NodeId>(self))[0];
        const Tensor& vp = tp.value(pred);
        if (Tensor* gp = tp.grad_ptr(pred))
            for (int64_t i = 0; i < vp.size(); ++i) {
                if (mask[i] == 0.0) continue;
                double r = vp[i] - target[i];
                (*gp)[i] += g * std::clamp(r, -1.0, 1.0) / static_cast<double>(valid);
            }
    });
}

inline NodeId sum_all(Tape& t, NodeId x) {
    const Tensor& vx = t.value(x);
    Tensor out = Tensor::scalar(vx.sum());
    return t.push(std::move(out), {x}, [x, self = t.node_count()](Tape& tp) {
        double g = tp.grad(static_cast<NodeId>(self))[0];
        if (Tensor* gx = tp.grad_ptr(x))
            for (int64_t i = 0; i < gx->size(); ++i) (*gx)[i] += g;
    });
}

inline NodeId mean_all(Tape& t, NodeId x) {
    return scale(t, sum_all(t, x), 1.0 / static_cast<double>(t.value(x).size()));
}

}  // namespace stereomamba::ops
