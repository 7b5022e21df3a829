// SPDX-License-Identifier: Apache-2.0
//
// Disparity error metrics, depth error through the calibration pair, image
// quality metrics (Gaussian-window SSIM, PSNR), and the warp-synthesis step
// used by the zero-shot evaluation: resample the left image through the
// predicted disparity field and compare against the captured right view.

#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stereomamba/data.hpp"
#include "stereomamba/tensor.hpp"

namespace stereomamba {

struct MetricReport {
    double epe_px = 0.0;
    double bad2_pct = 0.0;
    double bad3_pct = 0.0;
    double bad5_pct = 0.0;
    double depth_mae_mm = 0.0;
    int64_t valid_count = 0;
    std::optional<double> ssim;     // set by the warp protocol
    std::optional<double> psnr_db;  // set by the warp protocol
};

// Depth evaluation drops pixels where either disparity is at or below this:
// z = f*b/d blows up as d -> 0 and such labels carry no usable depth.
inline constexpr double kDepthMinDisparity = 0.5;

inline MetricReport disparity_metrics(const Tensor& pred, const Tensor& gt, const Tensor& valid,
                                      const Calib& calib) {
    if (pred.rank() != 2 || !pred.same_shape(gt) || !pred.same_shape(valid))
        throw std::invalid_argument("metrics: pred/gt/mask must share a [H, W] shape");
    if (!(calib.focal_px > 0.0) || !(calib.baseline_mm > 0.0))
        throw std::invalid_argument("metrics: calibration must be positive");
    MetricReport r;
    double abs_sum = 0.0;
    int64_t bad2 = 0, bad3 = 0, bad5 = 0;
    double depth_sum = 0.0;
    int64_t depth_count = 0;
    const double fb = calib.focal_px * calib.baseline_mm;
    for (int64_t i = 0; i < pred.size(); ++i) {
        if (valid[i] == 0.0) continue;
        ++r.valid_count;
        const double err = std::abs(pred[i] - gt[i]);
        abs_sum += err;
        bad2 += err > 2.0;
        bad3 += err > 3.0;
        bad5 += err > 5.0;
        if (pred[i] > kDepthMinDisparity && gt[i] > kDepthMinDisparity) {
            depth_sum += std::abs(fb / pred[i] - fb / gt[i]);
            ++depth_count;
        }
    }
    if (r.valid_count == 0) throw std::invalid_argument("metrics: empty validity mask");
    const double n = static_cast<double>(r.valid_count);
    r.epe_px = abs_sum / n;
    r.bad2_pct = 100.0 * static_cast<double>(bad2) / n;
    r.bad3_pct = 100.0 * static_cast<double>(bad3) / n;
    r.bad5_pct = 100.0 * static_cast<double>(bad5) / n;
    r.depth_mae_mm = depth_count > 0 ? depth_sum / static_cast<double>(depth_count) : 0.0;
    return r;
}

namespace ssim_detail {

inline constexpr int kWindow = 11;
inline constexpr double kSigma = 1.5;
inline constexpr double kC1 = 0.01 * 0.01;  // on data range 1.0
inline constexpr double kC2 = 0.03 * 0.03;

inline const std::array<double, kWindow * kWindow>& gaussian_window() {
    static const auto w = [] {
        std::array<double, kWindow * kWindow> out{};
        double total = 0.0;
        for (int dy = 0; dy < kWindow; ++dy)
            for (int dx = 0; dx < kWindow; ++dx) {
                double ry = dy - kWindow / 2, rx = dx - kWindow / 2;
                out[static_cast<size_t>(dy * kWindow + dx)] =
                    std::exp(-(rx * rx + ry * ry) / (2.0 * kSigma * kSigma));
                total += out[static_cast<size_t>(dy * kWindow + dx)];
            }
        for (double& v : out) v /= total;
        return out;
    }();
    return w;
}

}  // namespace ssim_detail

// Mean SSIM over fully in-frame 11x11 windows (Gaussian weights, sigma 1.5),
// channels averaged. With a mask, only windows whose every pixel is valid
// count. Identical inputs give exactly 1.0.
inline double ssim(const Tensor& a, const Tensor& b, const Tensor* valid = nullptr) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    if (a.rank() != 2 && !(a.rank() == 3 && a.dim(0) == 3))
        throw std::invalid_argument("ssim: want [H, W] or [3, H, W], got " + shape_str(a.shape()));
    const int64_t ch = a.rank() == 3 ? 3 : 1;
    const int64_t h = a.dim(a.rank() == 3 ? 1 : 0), w = a.dim(a.rank() == 3 ? 2 : 1);
    const int k = ssim_detail::kWindow;
    if (h < k || w < k)
        throw std::invalid_argument("ssim: image smaller than the " + std::to_string(k) + "x" +
                                    std::to_string(k) + " window");
    if (valid && (valid->rank() != 2 || valid->dim(0) != h || valid->dim(1) != w))
        throw std::invalid_argument("ssim: mask must be [H, W]");
    const auto& win = ssim_detail::gaussian_window();

    double total = 0.0;
    int64_t count = 0;
    for (int64_t y0 = 0; y0 + k <= h; ++y0)
        for (int64_t x0 = 0; x0 + k <= w; ++x0) {
            if (valid) {
                bool ok = true;
                for (int dy = 0; ok && dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx)
                        if ((*valid)[(y0 + dy) * w + x0 + dx] == 0.0) {
                            ok = false;
                            break;
                        }
                if (!ok) continue;
            }
            for (int64_t c = 0; c < ch; ++c) {
                const int64_t base = c * h * w;
                double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) {
                        const double g = win[static_cast<size_t>(dy * k + dx)];
                        const double va = a[base + (y0 + dy) * w + x0 + dx];
                        const double vb = b[base + (y0 + dy) * w + x0 + dx];
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                const double va2 = saa - ma * ma, vb2 = sbb - mb * mb, vab = sab - ma * mb;
                const double num = (2.0 * ma * mb + ssim_detail::kC1) * (2.0 * vab + ssim_detail::kC2);
                const double den =
                    (ma * ma + mb * mb + ssim_detail::kC1) * (va2 + vb2 + ssim_detail::kC2);
                total += num / den;
                ++count;
            }
        }
    if (count == 0) throw std::invalid_argument("ssim: no fully valid window positions");
    return total / static_cast<double>(count);
}

// 10*log10(1/MSE) on data range 1.0, capped at 99 dB (identical inputs hit
// the cap). With a mask, the MSE runs over valid pixels of every channel.
inline double psnr(const Tensor& a, const Tensor& b, const Tensor* valid = nullptr) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    const int64_t ch = a.rank() == 3 ? a.dim(0) : 1;
    const int64_t plane = a.size() / ch;
    if (valid && valid->size() != plane) throw std::invalid_argument("psnr: mask size mismatch");
    double se = 0.0;
    int64_t count = 0;
    for (int64_t c = 0; c < ch; ++c)
        for (int64_t i = 0; i < plane; ++i) {
            if (valid && (*valid)[i] == 0.0) continue;
            const double d = a[c * plane + i] - b[c * plane + i];
            se += d * d;
            ++count;
        }
    if (count == 0) throw std::invalid_argument("psnr: no valid pixels");
    const double mse = se / static_cast<double>(count);
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

// ---------------------------------------------------------------------------
// Warp synthesis: right_synth(x, y) = left(x + d(x, y), y), bilinear along
// the row. The left-view disparity map serves as a proxy sampling field at
// right-view coordinates; samples reaching outside the frame are invalid.

struct WarpResult {
    Tensor right_synth;  // [3, H, W]
    Tensor warp_valid;   // [H, W] of 0/1
};

inline WarpResult warp_synthesize(const Tensor& left, const Tensor& disp,
                                  const Tensor* valid_hint = nullptr) {
    if (left.rank() != 3 || left.dim(0) != 3)
        throw std::invalid_argument("warp: left image must be [3, H, W], got " + shape_str(left.shape()));
    if (disp.rank() != 2 || disp.dim(0) != left.dim(1) || disp.dim(1) != left.dim(2))
        throw std::invalid_argument("warp: disparity " + shape_str(disp.shape()) +
                                    " does not match image " + shape_str(left.shape()));
    if (valid_hint && !valid_hint->same_shape(disp))
        throw std::invalid_argument("warp: valid hint must match the disparity shape");
    const int64_t h = left.dim(1), w = left.dim(2);
    WarpResult out{Tensor::zeros({3, h, w}), Tensor::zeros({h, w})};
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            if (valid_hint && (*valid_hint)[y * w + x] == 0.0) continue;
            const double d = disp[y * w + x];
            if (!std::isfinite(d)) continue;
            const double xs = static_cast<double>(x) + d;
            if (xs < 0.0 || xs > static_cast<double>(w - 1)) continue;
            out.warp_valid[y * w + x] = 1.0;
            const int64_t x0 = static_cast<int64_t>(xs);
            const double f = xs - static_cast<double>(x0);
            for (int64_t c = 0; c < 3; ++c) {
                const double v0 = left[(c * h + y) * w + x0];
                out.right_synth[(c * h + y) * w + x] =
                    f == 0.0 ? v0 : v0 * (1.0 - f) + left[(c * h + y) * w + x0 + 1] * f;
            }
        }
    return out;
}

// Right-view coverage mask: scatter valid left pixels through the (integer)
// ground-truth disparity; 1 where some valid left pixel lands.
inline Tensor right_coverage(const Tensor& gt_disp, const Tensor& valid_mask) {
    if (gt_disp.rank() != 2 || !gt_disp.same_shape(valid_mask))
        throw std::invalid_argument("coverage: disparity and mask must share [H, W]");
    const int64_t h = gt_disp.dim(0), w = gt_disp.dim(1);
    Tensor cov = Tensor::zeros({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            if (valid_mask[y * w + x] == 0.0) continue;
            const int64_t xr = x - static_cast<int64_t>(gt_disp[y * w + x]);
            if (xr >= 0 && xr < w) cov[y * w + xr] = 1.0;
        }
    return cov;
}

// ---------------------------------------------------------------------------
// Report output: fixed CSV columns plus an aggregate "mean" row, and a
// single-line human summary.

struct FrameMetrics {
    std::string frame;
    MetricReport rep;
};

namespace metrics_detail {

inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string opt17(const std::optional<double>& v) { return v ? g17(*v) : "n/a"; }

}  // namespace metrics_detail

// Cross-frame aggregate: unweighted mean of every per-frame statistic, with
// valid counts summed instead. SSIM/PSNR average only over the frames that
// report them.
inline MetricReport mean_report(const std::vector<FrameMetrics>& rows) {
    MetricReport agg;
    double ssim_sum = 0.0, psnr_sum = 0.0;
    int64_t ssim_n = 0, psnr_n = 0;
    for (const FrameMetrics& fm : rows) {
        const MetricReport& r = fm.rep;
        agg.epe_px += r.epe_px;
        agg.bad2_pct += r.bad2_pct;
        agg.bad3_pct += r.bad3_pct;
        agg.bad5_pct += r.bad5_pct;
        agg.depth_mae_mm += r.depth_mae_mm;
        agg.valid_count += r.valid_count;
        if (r.ssim) {
            ssim_sum += *r.ssim;
            ++ssim_n;
        }
        if (r.psnr_db) {
            psnr_sum += *r.psnr_db;
            ++psnr_n;
        }
    }
    if (!rows.empty()) {
        const double n = static_cast<double>(rows.size());
        agg.epe_px /= n;
        agg.bad2_pct /= n;
        agg.bad3_pct /= n;
        agg.bad5_pct /= n;
        agg.depth_mae_mm /= n;
        if (ssim_n > 0) agg.ssim = ssim_sum / static_cast<double>(ssim_n);
        if (psnr_n > 0) agg.psnr_db = psnr_sum / static_cast<double>(psnr_n);
    }
    return agg;
}

inline std::string metrics_csv(const std::vector<FrameMetrics>& rows) {
    using metrics_detail::g17;
    using metrics_detail::opt17;
    std::string out = "frame,epe,bad2,bad3,bad5,depth_mae,ssim,psnr,valid_px\n";
    for (const FrameMetrics& fm : rows) {
        const MetricReport& r = fm.rep;
        out += fm.frame + "," + g17(r.epe_px) + "," + g17(r.bad2_pct) + "," + g17(r.bad3_pct) + "," +
               g17(r.bad5_pct) + "," + g17(r.depth_mae_mm) + "," + opt17(r.ssim) + "," +
               opt17(r.psnr_db) + "," + std::to_string(r.valid_count) + "\n";
    }
    if (!rows.empty()) {
        const MetricReport agg = mean_report(rows);
        out += "mean," + g17(agg.epe_px) + "," + g17(agg.bad2_pct) + "," + g17(agg.bad3_pct) + "," +
               g17(agg.bad5_pct) + "," + g17(agg.depth_mae_mm) + "," + opt17(agg.ssim) + "," +
               opt17(agg.psnr_db) + "," + std::to_string(agg.valid_count) + "\n";
    }
    return out;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<FrameMetrics>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("metrics: cannot open for writing: " + path.string());
    f << metrics_csv(rows);
}

inline std::string metric_summary_line(const MetricReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "EPE %.4f px | Bad2 %.2f%% | Bad3 %.2f%% | Bad5 %.2f%% | depth MAE %.3f mm | valid %lld",
                  r.epe_px, r.bad2_pct, r.bad3_pct, r.bad5_pct, r.depth_mae_mm,
                  static_cast<long long>(r.valid_count));
    std::string out = buf;
    if (r.ssim) {
        std::snprintf(buf, sizeof buf, " | SSIM %.4f", *r.ssim);
        out += buf;
    }
    if (r.psnr_db) {
        std::snprintf(buf, sizeof buf, " | PSNR %.2f dB", *r.psnr_db);
        out += buf;
    }
    return out;
}

}  // namespace stereomamba
