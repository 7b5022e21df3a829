// SPDX-License-Identifier: Apache-2.0
//
// Stereo sample plumbing: PFM/PPM/PGM file formats, a deterministic synthetic
// stereogram generator with exact integer ground truth, and the crop +
// channel-normalization augmentation used by the trainer.
//
// Disparity convention, fixed project-wide: left pixel (x, y) corresponds to
// right pixel (x - d, y) with d >= 0.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stereomamba/tensor.hpp"

namespace stereomamba {

struct Calib {
    double focal_px = 320.0;
    double baseline_mm = 5.0;
};

struct StereoSample {
    Tensor left, right;   // [3, H, W], generator output lies in [0, 1]
    Tensor gt_disparity;  // [H, W] in pixels
    Tensor valid_mask;    // [H, W], 1 = correspondence in frame and unoccluded
    Calib calib;
};

// ---------------------------------------------------------------------------
// PFM: grayscale portable float map. Header "Pf\n<W> <H>\n<scale>\n", scale
// < 0 means little-endian payload, rows stored bottom-to-top as 32-bit floats.
// The writer always emits scale -1.0 on a little-endian host.

inline void write_pfm(const std::filesystem::path& path, const Tensor& map) {
    if (map.rank() != 2)
        throw std::invalid_argument("pfm: expected a [H, W] map, got " + shape_str(map.shape()));
    if (!map.all_finite()) throw std::invalid_argument("pfm: refusing to write non-finite values");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("pfm: cannot open for writing: " + path.string());
    const int64_t h = map.dim(0), w = map.dim(1);
    f << "Pf\n" << w << " " << h << "\n-1.0\n";
    for (int64_t y = h - 1; y >= 0; --y)
        for (int64_t x = 0; x < w; ++x) {
            float v = static_cast<float>(map[y * w + x]);
            f.write(reinterpret_cast<const char*>(&v), 4);
        }
    if (!f) throw std::runtime_error("pfm: short write: " + path.string());
}

inline Tensor read_pfm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("pfm: cannot open: " + path.string());
    std::string magic;
    f >> magic;
    if (magic != "Pf")
        throw std::runtime_error("pfm: bad magic '" + magic + "' (want grayscale 'Pf'): " + path.string());
    int64_t w = 0, h = 0;
    double scale = 0.0;
    if (!(f >> w >> h >> scale) || w < 1 || h < 1)
        throw std::runtime_error("pfm: malformed header: " + path.string());
    if (scale == 0.0) throw std::runtime_error("pfm: zero scale: " + path.string());
    f.get();  // the single whitespace byte that terminates the header
    std::vector<char> raw(static_cast<size_t>(h * w * 4));
    f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size()))
        throw std::runtime_error("pfm: truncated payload: " + path.string());
    const bool swap = scale > 0.0;  // positive scale marks a big-endian payload
    Tensor out({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            uint32_t bits;
            std::memcpy(&bits, raw.data() + ((h - 1 - y) * w + x) * 4, 4);
            if (swap) bits = __builtin_bswap32(bits);
            float v;
            std::memcpy(&v, &bits, 4);
            out[y * w + x] = static_cast<double>(v);
        }
    return out;
}

// ---------------------------------------------------------------------------
// PPM: binary P6, maxval 255. Values map to [0, 1] on read and round to the
// nearest byte on write, so a roundtrip moves a channel by at most 1/510.

inline void write_ppm(const std::filesystem::path& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw std::invalid_argument("ppm: expected [3, H, W], got " + shape_str(img.shape()));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ppm: cannot open for writing: " + path.string());
    const int64_t h = img.dim(1), w = img.dim(2);
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w * 3));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                double v = img[(c * h + y) * w + x];
                long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
                row[static_cast<size_t>(x * 3 + c)] = static_cast<unsigned char>(q);
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw std::runtime_error("ppm: short write: " + path.string());
}

namespace img_detail {

// shared P6/P5 header parse; returns {h, w}
inline std::pair<int64_t, int64_t> read_netpbm_header(std::ifstream& f, const char* want_magic,
                                                      const std::string& pathname) {
    std::string magic;
    f >> magic;
    if (magic != want_magic)
        throw std::runtime_error(std::string("netpbm: bad magic '") + magic + "' (want '" +
                                 want_magic + "'): " + pathname);
    int64_t w = 0, h = 0, maxval = 0;
    if (!(f >> w >> h >> maxval) || w < 1 || h < 1)
        throw std::runtime_error("netpbm: malformed header: " + pathname);
    if (maxval != 255)
        throw std::runtime_error("netpbm: unsupported maxval " + std::to_string(maxval) + ": " + pathname);
    f.get();
    return {h, w};
}

}  // namespace img_detail

inline Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ppm: cannot open: " + path.string());
    auto [h, w] = img_detail::read_netpbm_header(f, "P6", path.string());
    std::vector<unsigned char> raw(static_cast<size_t>(h * w * 3));
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size()))
        throw std::runtime_error("ppm: truncated payload: " + path.string());
    Tensor out({3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                out[(c * h + y) * w + x] = raw[static_cast<size_t>((y * w + x) * 3 + c)] / 255.0;
    return out;
}

// ---------------------------------------------------------------------------
// PGM: binary P5 validity masks, 255 = valid; any nonzero byte reads as valid.

inline void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask) {
    if (mask.rank() != 2)
        throw std::invalid_argument("pgm: expected a [H, W] mask, got " + shape_str(mask.shape()));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("pgm: cannot open for writing: " + path.string());
    const int64_t h = mask.dim(0), w = mask.dim(1);
    f << "P5\n" << w << " " << h << "\n255\n";
    for (int64_t i = 0; i < h * w; ++i) {
        unsigned char b = mask[i] != 0.0 ? 255 : 0;
        f.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!f) throw std::runtime_error("pgm: short write: " + path.string());
}

inline Tensor read_mask_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("pgm: cannot open: " + path.string());
    auto [h, w] = img_detail::read_netpbm_header(f, "P5", path.string());
    std::vector<unsigned char> raw(static_cast<size_t>(h * w));
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size()))
        throw std::runtime_error("pgm: truncated payload: " + path.string());
    Tensor out({h, w});
    for (int64_t i = 0; i < h * w; ++i) out[i] = raw[static_cast<size_t>(i)] ? 1.0 : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Forward-render a right view from a left image and an integer disparity map.
// Among left pixels mapping to the same right column the largest disparity
// (nearest surface) wins; right pixels nobody maps to stay black. A left
// pixel is valid when its correspondence is in frame and it won the contest.

struct RenderedView {
    Tensor right;  // [3, H, W]
    Tensor valid;  // [H, W] of 0/1
};

inline RenderedView render_stereo(const Tensor& left, const Tensor& disp) {
    if (left.rank() != 3 || left.dim(0) != 3)
        throw std::invalid_argument("render: left image must be [3, H, W], got " + shape_str(left.shape()));
    if (disp.rank() != 2 || disp.dim(0) != left.dim(1) || disp.dim(1) != left.dim(2))
        throw std::invalid_argument("render: disparity " + shape_str(disp.shape()) +
                                    " does not match image " + shape_str(left.shape()));
    const int64_t h = left.dim(1), w = left.dim(2);
    int64_t d_hi = 0;
    for (int64_t i = 0; i < disp.size(); ++i) {
        double d = disp[i];
        if (!(d >= 0.0) || d != std::floor(d) || d > static_cast<double>(w))
            throw std::invalid_argument("render: disparities must be nonnegative integers within the image width");
        d_hi = std::max(d_hi, static_cast<int64_t>(d));
    }

    std::vector<int64_t> winner(static_cast<size_t>(h * w), -1);  // left column feeding each right pixel
    for (int64_t y = 0; y < h; ++y)
        for (int64_t xr = 0; xr < w; ++xr)
            for (int64_t d = d_hi; d >= 0; --d) {
                int64_t xl = xr + d;
                if (xl < w && disp[y * w + xl] == static_cast<double>(d)) {
                    winner[static_cast<size_t>(y * w + xr)] = xl;
                    break;
                }
            }

    RenderedView out{Tensor::zeros({3, h, w}), Tensor::zeros({h, w})};
    for (int64_t y = 0; y < h; ++y)
        for (int64_t xr = 0; xr < w; ++xr) {
            int64_t xl = winner[static_cast<size_t>(y * w + xr)];
            if (xl < 0) continue;
            for (int64_t c = 0; c < 3; ++c)
                out.right[(c * h + y) * w + xr] = left[(c * h + y) * w + xl];
        }
    for (int64_t y = 0; y < h; ++y)
        for (int64_t xl = 0; xl < w; ++xl) {
            int64_t xr = xl - static_cast<int64_t>(disp[y * w + xl]);
            if (xr >= 0 && winner[static_cast<size_t>(y * w + xr)] == xl)
                out.valid[y * w + xl] = 1.0;
        }
    return out;
}

namespace synth_detail {

// clamped box blur, horizontal then vertical, radius r
inline void box_blur(std::vector<double>& img, int64_t h, int64_t w, int64_t r) {
    std::vector<double> tmp(img.size());
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            int64_t lo = std::max<int64_t>(0, x - r), hi = std::min(w - 1, x + r);
            double acc = 0.0;
            for (int64_t k = lo; k <= hi; ++k) acc += img[static_cast<size_t>(y * w + k)];
            tmp[static_cast<size_t>(y * w + x)] = acc / static_cast<double>(hi - lo + 1);
        }
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            int64_t lo = std::max<int64_t>(0, y - r), hi = std::min(h - 1, y + r);
            double acc = 0.0;
            for (int64_t k = lo; k <= hi; ++k) acc += tmp[static_cast<size_t>(k * w + x)];
            img[static_cast<size_t>(y * w + x)] = acc / static_cast<double>(hi - lo + 1);
        }
}

}  // namespace synth_detail

// Low-pass noise texture: smooth enough for stable local matching, aperiodic
// so correspondences stay unambiguous. Each plane is standardized to mean 0.5
// and spread 0.15 (then clipped to (0, 1)) so every sample shares the same
// channel statistics and dataset normalization transfers across batches.
inline Tensor smooth_texture(Rng& rng, int64_t h, int64_t w) {
    Tensor tex({3, h, w});
    for (int64_t c = 0; c < 3; ++c) {
        std::vector<double> plane(static_cast<size_t>(h * w));
        for (double& v : plane) v = rng.uniform();
        synth_detail::box_blur(plane, h, w, 2);
        synth_detail::box_blur(plane, h, w, 2);
        double mu = 0.0, sq = 0.0;
        for (double v : plane) {
            mu += v;
            sq += v * v;
        }
        mu /= static_cast<double>(plane.size());
        double sigma = std::sqrt(std::max(sq / static_cast<double>(plane.size()) - mu * mu, 0.0));
        for (int64_t i = 0; i < h * w; ++i)
            tex[c * h * w + i] =
                sigma < 1e-9 ? 0.5
                             : std::clamp(0.5 + 0.15 * (plane[static_cast<size_t>(i)] - mu) / sigma,
                                          0.02, 0.98);
    }
    return tex;
}

// Piecewise-constant scene: a far background plane plus random fronto-parallel
// rectangles painted in increasing disparity order so nearer layers occlude
// farther ones. Ground truth is exact by construction; the right view comes
// from the forward render above, so left(x, y) == right(x - d, y) holds
// bitwise at every valid pixel.
inline StereoSample synth_stereogram(uint64_t seed, int64_t h, int64_t w, int64_t d_max_gt,
                                     int64_t n_layers) {
    if (h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0)
        throw std::invalid_argument("synth: H and W must be positive multiples of 16");
    if (d_max_gt < 0 || d_max_gt >= w / 4)
        throw std::invalid_argument("synth: need 0 <= d_max_gt < W/4, got " + std::to_string(d_max_gt) +
                                    " at width " + std::to_string(w));
    if (n_layers < 0) throw std::invalid_argument("synth: layer count must be nonnegative");

    Rng rng(derive_seed(seed, 0x5ce9e));
    Tensor left = smooth_texture(rng, h, w);

    Tensor disp({h, w});
    int64_t d_bg = d_max_gt == 0 ? 0 : rng.uniform_int(1, std::max<int64_t>(1, d_max_gt / 4));
    disp.fill(static_cast<double>(d_bg));

    struct Layer {
        int64_t y0, x0, lh, lw, d;
    };
    std::vector<Layer> layers;
    if (d_max_gt > 0)
        for (int64_t i = 0; i < n_layers; ++i) {
            Layer l;
            l.lh = rng.uniform_int(h / 8, h / 2);
            l.lw = rng.uniform_int(w / 8, w / 2);
            l.y0 = rng.uniform_int(0, h - l.lh);
            l.x0 = rng.uniform_int(0, w - l.lw);
            l.d = rng.uniform_int(1, d_max_gt);
            layers.push_back(l);
        }
    std::stable_sort(layers.begin(), layers.end(), [](const Layer& a, const Layer& b) { return a.d < b.d; });
    for (const Layer& l : layers)
        for (int64_t y = l.y0; y < l.y0 + l.lh; ++y)
            for (int64_t x = l.x0; x < l.x0 + l.lw; ++x) disp[y * w + x] = static_cast<double>(l.d);

    RenderedView rv = render_stereo(left, disp);
    return {left, rv.right, disp, rv.valid, Calib{}};
}

// ---------------------------------------------------------------------------
// Directory layout: stem.left.ppm / stem.right.ppm / stem.disp.pfm /
// stem.mask.pgm. Calibration is not persisted; the synthetic default applies
// unless the caller overrides it.

inline void save_sample(const std::filesystem::path& dir, const std::string& stem,
                        const StereoSample& s) {
    write_ppm(dir / (stem + ".left.ppm"), s.left);
    write_ppm(dir / (stem + ".right.ppm"), s.right);
    write_pfm(dir / (stem + ".disp.pfm"), s.gt_disparity);
    write_mask_pgm(dir / (stem + ".mask.pgm"), s.valid_mask);
}

inline StereoSample load_sample(const std::filesystem::path& dir, const std::string& stem,
                                Calib calib = Calib{}) {
    StereoSample s;
    s.left = read_ppm(dir / (stem + ".left.ppm"));
    s.right = read_ppm(dir / (stem + ".right.ppm"));
    s.gt_disparity = read_pfm(dir / (stem + ".disp.pfm"));
    s.valid_mask = read_mask_pgm(dir / (stem + ".mask.pgm"));
    s.calib = calib;
    return s;
}

inline std::vector<std::string> list_sample_stems(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw std::runtime_error("dataset directory not found: " + dir.string());
    const std::string suffix = ".left.ppm";
    std::vector<std::string> stems;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        std::string name = entry.path().filename().string();
        if (name.size() > suffix.size() && name.ends_with(suffix))
            stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(stems.begin(), stems.end());
    return stems;
}

// ---------------------------------------------------------------------------
// Augmentation: one crop window shared by all planes, then per-channel
// normalization of both views from dataset statistics. Disparity values pass
// through untouched (a crop translates, it does not rescale).

struct ChannelStats {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stdev{1.0, 1.0, 1.0};
};

inline ChannelStats compute_stats(const std::vector<StereoSample>& set) {
    if (set.empty()) throw std::invalid_argument("stats: empty sample set");
    ChannelStats st;
    std::array<double, 3> sum{}, sumsq{};
    int64_t n = 0;
    for (const StereoSample& s : set) {
        const int64_t plane = s.left.dim(1) * s.left.dim(2);
        for (const Tensor* img : {&s.left, &s.right})
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t i = 0; i < plane; ++i) {
                    double v = (*img)[c * plane + i];
                    sum[static_cast<size_t>(c)] += v;
                    sumsq[static_cast<size_t>(c)] += v * v;
                }
        n += 2 * plane;
    }
    for (size_t c = 0; c < 3; ++c) {
        st.mean[c] = sum[c] / static_cast<double>(n);
        double var = sumsq[c] / static_cast<double>(n) - st.mean[c] * st.mean[c];
        st.stdev[c] = std::sqrt(std::max(var, 1e-12));
    }
    return st;
}

inline Tensor normalize_channels(const Tensor& img, const ChannelStats& st) {
    Tensor out(img.shape());
    const int64_t plane = img.dim(1) * img.dim(2);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < plane; ++i)
            out[c * plane + i] =
                (img[c * plane + i] - st.mean[static_cast<size_t>(c)]) / st.stdev[static_cast<size_t>(c)];
    return out;
}

namespace crop_detail {

inline Tensor crop2(const Tensor& t, int64_t y0, int64_t x0, int64_t ch, int64_t cw) {
    Tensor out({ch, cw});
    for (int64_t y = 0; y < ch; ++y)
        for (int64_t x = 0; x < cw; ++x) out[y * cw + x] = t[(y0 + y) * t.dim(1) + x0 + x];
    return out;
}

inline Tensor crop3(const Tensor& t, int64_t y0, int64_t x0, int64_t ch, int64_t cw) {
    Tensor out({t.dim(0), ch, cw});
    for (int64_t c = 0; c < t.dim(0); ++c)
        for (int64_t y = 0; y < ch; ++y)
            for (int64_t x = 0; x < cw; ++x)
                out[(c * ch + y) * cw + x] = t[(c * t.dim(1) + y0 + y) * t.dim(2) + x0 + x];
    return out;
}

}  // namespace crop_detail

inline StereoSample augment(const StereoSample& s, int64_t crop_h, int64_t crop_w,
                            const ChannelStats& stats, Rng& rng) {
    const int64_t h = s.left.dim(1), w = s.left.dim(2);
    if (crop_h < 16 || crop_w < 16 || crop_h % 16 != 0 || crop_w % 16 != 0)
        throw std::invalid_argument("augment: crop dims must be positive multiples of 16");
    if (crop_h > h || crop_w > w)
        throw std::invalid_argument("augment: crop " + std::to_string(crop_h) + "x" +
                                    std::to_string(crop_w) + " exceeds image " + std::to_string(h) +
                                    "x" + std::to_string(w));
    const int64_t y0 = rng.uniform_int(0, h - crop_h);
    const int64_t x0 = rng.uniform_int(0, w - crop_w);
    StereoSample out;
    out.left = normalize_channels(crop_detail::crop3(s.left, y0, x0, crop_h, crop_w), stats);
    out.right = normalize_channels(crop_detail::crop3(s.right, y0, x0, crop_h, crop_w), stats);
    out.gt_disparity = crop_detail::crop2(s.gt_disparity, y0, x0, crop_h, crop_w);
    out.valid_mask = crop_detail::crop2(s.valid_mask, y0, x0, crop_h, crop_w);
    out.calib = s.calib;
    return out;
}

}  // namespace stereomamba
