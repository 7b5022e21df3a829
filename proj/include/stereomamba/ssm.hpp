// SPDX-License-Identifier: Apache-2.0
//
// Selective-scan state-space core.
//
// Per channel, with state size N and shared per-step inputs:
//   h_t = a_t * h_{t-1} + b_t * x_t      (h_{-1} = 0, a_t scalar, b_t in R^N)
//   y_t = <c_t, h_t>
// The same linear map has a quadratic view M[t][s] = <c_t, prod(a_{s+1..t}) b_s>
// for s <= t, from which y = M x. materialize_m builds M by the column
// recurrence and cross-checks it against the explicit decay-product
// factorization M = L o (C B^T); the two routes share no intermediate floats.
// With a == 1 the map coincides with causally masked linear attention.

#pragma once

#include <chrono>

#include "stereomamba/ops.hpp"

namespace stereomamba {

inline void check_scan_inputs(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& x) {
    if (a.rank() != 1)
        throw std::invalid_argument("scan: decay must be rank 1 [T], got " + shape_str(a.shape()));
    const int64_t T = a.dim(0);
    if (b.rank() != 2 || b.dim(0) != T)
        throw std::invalid_argument("scan: input mix must be [T, N], got " + shape_str(b.shape()) +
                                    " with T=" + std::to_string(T));
    if (!c.same_shape(b))
        throw std::invalid_argument("scan: output mix " + shape_str(c.shape()) +
                                    " must match input mix " + shape_str(b.shape()));
    if (x.rank() != 2 || x.dim(1) != T)
        throw std::invalid_argument("scan: stream must be [channels, T], got " + shape_str(x.shape()) +
                                    " with T=" + std::to_string(T));
}

// linear-time recurrence; x [Ch, T] -> y [Ch, T]
inline Tensor ssm_scan_forward(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& x,
                               Tensor* h_out = nullptr) {
    check_scan_inputs(a, b, c, x);
    const int64_t T = a.dim(0), N = b.dim(1), Ch = x.dim(0);
    Tensor y({Ch, T});
    Tensor h = Tensor::zeros({Ch, T, N});
    std::vector<double> state(static_cast<size_t>(N));
    for (int64_t ch = 0; ch < Ch; ++ch) {
        std::fill(state.begin(), state.end(), 0.0);
        for (int64_t t = 0; t < T; ++t) {
            const double at = a[t];
            const double xt = x[ch * T + t];
            const double* bt = b.data() + t * N;
            const double* ct = c.data() + t * N;
            double* ht = h.data() + (ch * T + t) * N;
            double acc = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                state[static_cast<size_t>(n)] = at * state[static_cast<size_t>(n)] + bt[n] * xt;
                ht[n] = state[static_cast<size_t>(n)];
                acc += ct[n] * state[static_cast<size_t>(n)];
            }
            y[ch * T + t] = acc;
        }
    }
    if (h_out) *h_out = h;
    return y;
}

// M[t][s] = <c_t, prod_{k=s+1..t} a_k * b_s>, strictly 0 above the diagonal.
// Internally re-derives every entry through the decay-product factorization
// and refuses to return if the two disagree.
inline Tensor materialize_m(const Tensor& a, const Tensor& b, const Tensor& c) {
    if (a.rank() != 1 || b.rank() != 2 || !b.same_shape(c) || b.dim(0) != a.dim(0))
        throw std::invalid_argument("materialize_m: want a [T], b and c [T, N]; got " +
                                    shape_str(a.shape()) + ", " + shape_str(b.shape()) + ", " +
                                    shape_str(c.shape()));
    const int64_t T = a.dim(0), N = b.dim(1);
    Tensor m = Tensor::zeros({T, T});
    std::vector<double> w(static_cast<size_t>(N));
    for (int64_t s = 0; s < T; ++s) {
        for (int64_t n = 0; n < N; ++n) w[static_cast<size_t>(n)] = b[s * N + n];
        for (int64_t t = s; t < T; ++t) {
            if (t > s)
                for (int64_t n = 0; n < N; ++n) w[static_cast<size_t>(n)] *= a[t];
            double acc = 0.0;
            for (int64_t n = 0; n < N; ++n) acc += c[t * N + n] * w[static_cast<size_t>(n)];
            m.at(t, s) = acc;
        }
    }
    // factorized route: running decay product times a plain dot product
    double worst = 0.0;
    for (int64_t s = 0; s < T; ++s) {
        double decay = 1.0;
        for (int64_t t = s; t < T; ++t) {
            if (t > s) decay *= a[t];
            double dot = 0.0;
            for (int64_t n = 0; n < N; ++n) dot += c[t * N + n] * b[s * N + n];
            double ref = decay * dot;
            double scale = std::max({1.0, std::abs(ref), std::abs(m.at(t, s))});
            worst = std::max(worst, std::abs(ref - m.at(t, s)) / scale);
        }
    }
    if (worst > 1e-12)
        throw std::runtime_error("materialize_m: factorization cross-check failed, rel err " +
                                 std::to_string(worst));
    return m;
}

// y = M x over channels: y[ch] = M * x[ch]
inline Tensor ssm_scan_quadratic(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& x) {
    check_scan_inputs(a, b, c, x);
    Tensor m = materialize_m(a, b, c);
    const int64_t T = a.dim(0), Ch = x.dim(0);
    Tensor y = Tensor::zeros({Ch, T});
    for (int64_t ch = 0; ch < Ch; ++ch)
        for (int64_t t = 0; t < T; ++t) {
            double acc = 0.0;
            for (int64_t s = 0; s <= t; ++s) acc += m.at(t, s) * x[ch * T + s];
            y[ch * T + t] = acc;
        }
    return y;
}

// (tril(Q K^T)) V, diagonal included; Q,K [T,N], V [T,Cv] -> [T,Cv]
inline Tensor masked_linear_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || !q.same_shape(k))
        throw std::invalid_argument("masked_linear_attention: queries " + shape_str(q.shape()) +
                                    " and keys " + shape_str(k.shape()) + " must both be [T, N]");
    if (v.rank() != 2 || v.dim(0) != q.dim(0))
        throw std::invalid_argument("masked_linear_attention: values " + shape_str(v.shape()) +
                                    " must be [T, Cv] with T=" + std::to_string(q.dim(0)));
    const int64_t T = q.dim(0), N = q.dim(1), Cv = v.dim(1);
    Tensor y = Tensor::zeros({T, Cv});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t s = 0; s <= t; ++s) {
            double score = 0.0;
            for (int64_t n = 0; n < N; ++n) score += q.at(t, n) * k.at(s, n);
            for (int64_t j = 0; j < Cv; ++j) y.at(t, j) += score * v.at(s, j);
        }
    return y;
}

struct ScanBenchRow {
    int64_t t = 0;
    double linear_ms = 0.0;
    double quadratic_ms = 0.0;
    double max_diff = 0.0;
};

// time the recurrence against the materialized-matrix route at growing T
inline std::vector<ScanBenchRow> scan_bench(int64_t n_state, int64_t t_max, uint64_t seed) {
    std::vector<ScanBenchRow> rows;
    for (int64_t T = 64; T <= t_max; T *= 2) {
        Rng rng(derive_seed(seed, 7001, static_cast<uint64_t>(T)));
        Tensor a({T});
        for (int64_t i = 0; i < T; ++i) a[i] = rng.uniform(0.6, 0.999);
        Tensor b = rng.uniform_tensor({T, n_state}, -1.0, 1.0);
        Tensor c = rng.uniform_tensor({T, n_state}, -1.0, 1.0);
        Tensor x = rng.uniform_tensor({1, T}, -1.0, 1.0);
        auto clock = [] { return std::chrono::steady_clock::now(); };
        auto t0 = clock();
        Tensor y_lin = ssm_scan_forward(a, b, c, x);
        auto t1 = clock();
        Tensor y_quad = ssm_scan_quadratic(a, b, c, x);
        auto t2 = clock();
        ScanBenchRow row;
        row.t = T;
        row.linear_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        row.quadratic_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
        row.max_diff = max_abs_diff(y_lin, y_quad);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace stereomamba

namespace stereomamba::ops {

// taped batched scan: a [T], b [T,N], c [T,N], x [Ch,T] -> y [Ch,T]
inline NodeId ssm_scan(Tape& t, NodeId a, NodeId b, NodeId c, NodeId x) {
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    const Tensor& vc = t.value(c);
    const Tensor& vx = t.value(x);
    check_scan_inputs(va, vb, vc, vx);
    Tensor h;
    Tensor y = ssm_scan_forward(va, vb, vc, vx, &h);
    const int64_t T = va.dim(0), N = vb.dim(1), Ch = vx.dim(0);
    return t.push(std::move(y), {a, b, c, x}, [a, b, c, x, h, T, N, Ch, self = t.node_count()](Tape& tp) {
        const Tensor& gy = tp.grad(static_cast<NodeId>(self));
        const Tensor& va = tp.value(a);
        const Tensor& vb = tp.value(b);
        const Tensor& vc = tp.value(c);
        const Tensor& vx = tp.value(x);
        Tensor* ga = tp.grad_ptr(a);
        Tensor* gb = tp.grad_ptr(b);
        Tensor* gc = tp.grad_ptr(c);
        Tensor* gx = tp.grad_ptr(x);
        std::vector<double> lam(static_cast<size_t>(N));
        for (int64_t ch = 0; ch < Ch; ++ch) {
            std::fill(lam.begin(), lam.end(), 0.0);
            for (int64_t t = T - 1; t >= 0; --t) {
                const double g = gy[ch * T + t];
                const double* ct = vc.data() + t * N;
                const double* bt = vb.data() + t * N;
                const double* ht = h.data() + (ch * T + t) * N;
                for (int64_t n = 0; n < N; ++n) lam[static_cast<size_t>(n)] += g * ct[n];
                if (gc)
                    for (int64_t n = 0; n < N; ++n) (*gc)[t * N + n] += g * ht[n];
                if (ga && t > 0) {
                    const double* hp = h.data() + (ch * T + t - 1) * N;
                    double acc = 0.0;
                    for (int64_t n = 0; n < N; ++n) acc += lam[static_cast<size_t>(n)] * hp[n];
                    (*ga)[t] += acc;
                }
                const double xt = vx[ch * T + t];
                if (gb)
                    for (int64_t n = 0; n < N; ++n) (*gb)[t * N + n] += lam[static_cast<size_t>(n)] * xt;
                if (gx) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < N; ++n) acc += lam[static_cast<size_t>(n)] * bt[n];
                    (*gx)[ch * T + t] += acc;
                }
                const double at = va[t];
                for (int64_t n = 0; n < N; ++n) lam[static_cast<size_t>(n)] *= at;
            }
        }
    });
}

}  // namespace stereomamba::ops
