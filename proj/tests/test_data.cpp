// SPDX-License-Identifier: Apache-2.0
//
// File-format conformance (golden bytes, roundtrips, malformed-input errors),
// the stereogram generator's exact photometric consistency and occlusion
// rules, and the crop + normalization augmentation.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "stereomamba/data.hpp"

using namespace stereomamba;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string float_le_bytes(float v) {
    char b[4];
    std::memcpy(b, &v, 4);
    return std::string(b, 4);
}

}  // namespace

TEST_CASE("float map files") {
    fs::path dir = fresh_dir("sm_test_pfm");

    SECTION("2x2 little-endian header is byte-exact") {
        Tensor m({2, 2});
        for (int64_t i = 0; i < 4; ++i) m[i] = static_cast<double>(i);
        write_pfm(dir / "g.pfm", m);
        std::string bytes = slurp(dir / "g.pfm");
        REQUIRE(bytes.size() == 12 + 16);
        REQUIRE(bytes.substr(0, 12) == "Pf\n2 2\n-1.0\n");
    }

    SECTION("roundtrip preserves 32-bit values exactly") {
        Rng rng(801);
        Tensor m({7, 5});
        for (int64_t i = 0; i < m.size(); ++i)
            m[i] = static_cast<double>(static_cast<float>(rng.uniform(-100.0, 100.0)));
        write_pfm(dir / "r.pfm", m);
        REQUIRE(bitwise_equal(read_pfm(dir / "r.pfm"), m));
    }

    SECTION("rows are stored bottom to top") {
        // file rows: (1, 2) then (3, 4) -> image top row must be (3, 4)
        spit(dir / "b.pfm", "Pf\n2 2\n-1.0\n" + float_le_bytes(1.f) + float_le_bytes(2.f) +
                                float_le_bytes(3.f) + float_le_bytes(4.f));
        Tensor m = read_pfm(dir / "b.pfm");
        REQUIRE(m[0] == 3.0);
        REQUIRE(m[1] == 4.0);
        REQUIRE(m[2] == 1.0);
        REQUIRE(m[3] == 2.0);
    }

    SECTION("positive scale marks a big-endian payload") {
        std::string be = float_le_bytes(2.5f);
        std::reverse(be.begin(), be.end());
        spit(dir / "be.pfm", "Pf\n1 1\n1.0\n" + be);
        REQUIRE(read_pfm(dir / "be.pfm")[0] == 2.5);
    }

    SECTION("malformed inputs raise distinct errors") {
        spit(dir / "color.pfm", "PF\n1 1\n-1.0\n" + std::string(12, '\0'));
        REQUIRE_THROWS_WITH(read_pfm(dir / "color.pfm"), Catch::Matchers::ContainsSubstring("bad magic"));
        spit(dir / "zero.pfm", "Pf\n1 1\n0.0\n" + float_le_bytes(1.f));
        REQUIRE_THROWS_WITH(read_pfm(dir / "zero.pfm"), Catch::Matchers::ContainsSubstring("zero scale"));
        spit(dir / "short.pfm", "Pf\n2 2\n-1.0\n" + float_le_bytes(1.f));
        REQUIRE_THROWS_WITH(read_pfm(dir / "short.pfm"), Catch::Matchers::ContainsSubstring("truncated"));
        REQUIRE_THROWS_WITH(read_pfm(dir / "missing.pfm"), Catch::Matchers::ContainsSubstring("cannot open"));
    }

    SECTION("NaN payloads read back as NaN") {
        spit(dir / "nan.pfm",
             "Pf\n1 1\n-1.0\n" + float_le_bytes(std::numeric_limits<float>::quiet_NaN()));
        REQUIRE(std::isnan(read_pfm(dir / "nan.pfm")[0]));
        // and the writer refuses to produce such a file
        Tensor bad({1, 1});
        bad[0] = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(write_pfm(dir / "w.pfm", bad), std::invalid_argument);
    }
}

TEST_CASE("color image files") {
    fs::path dir = fresh_dir("sm_test_ppm");

    SECTION("4x3 header is byte-exact and black stays black") {
        write_ppm(dir / "g.ppm", Tensor::zeros({3, 3, 4}));
        std::string bytes = slurp(dir / "g.ppm");
        REQUIRE(bytes.substr(0, 11) == "P6\n4 3\n255\n");
        REQUIRE(bytes.size() == 11 + 3 * 4 * 3);
        Tensor back = read_ppm(dir / "g.ppm");
        for (int64_t i = 0; i < back.size(); ++i) REQUIRE(back[i] == 0.0);
    }

    SECTION("roundtrip stays within half a quantization step") {
        Rng rng(802);
        Tensor img = rng.uniform_tensor({3, 5, 6}, 0.0, 1.0);
        write_ppm(dir / "r.ppm", img);
        Tensor back = read_ppm(dir / "r.ppm");
        REQUIRE(max_abs_diff(back, img) <= 1.0 / 510.0 + 1e-12);
    }

    SECTION("unsupported headers are rejected") {
        spit(dir / "p5.ppm", "P5\n1 1\n255\n\xff");
        REQUIRE_THROWS_WITH(read_ppm(dir / "p5.ppm"), Catch::Matchers::ContainsSubstring("bad magic"));
        spit(dir / "m.ppm", std::string("P6\n1 1\n254\n") + "\x01\x02\x03");
        REQUIRE_THROWS_WITH(read_ppm(dir / "m.ppm"), Catch::Matchers::ContainsSubstring("maxval"));
        spit(dir / "t.ppm", "P6\n2 2\n255\nabc");
        REQUIRE_THROWS_WITH(read_ppm(dir / "t.ppm"), Catch::Matchers::ContainsSubstring("truncated"));
    }
}

TEST_CASE("mask files") {
    fs::path dir = fresh_dir("sm_test_pgm");
    Tensor mask({2, 3});
    double vals[] = {1, 0, 1, 0, 0, 1};
    for (int64_t i = 0; i < 6; ++i) mask[i] = vals[i];
    write_mask_pgm(dir / "m.pgm", mask);
    REQUIRE(slurp(dir / "m.pgm").substr(0, 11) == "P5\n3 2\n255\n");
    REQUIRE(bitwise_equal(read_mask_pgm(dir / "m.pgm"), mask));

    // any nonzero byte counts as valid on read
    spit(dir / "soft.pgm", std::string("P5\n2 1\n255\n") + '\x07' + '\x00');
    Tensor soft = read_mask_pgm(dir / "soft.pgm");
    REQUIRE(soft[0] == 1.0);
    REQUIRE(soft[1] == 0.0);
}

TEST_CASE("forward rendering honors the disparity convention") {
    Rng rng(803);
    const int64_t h = 3, w = 16;
    Tensor left = rng.uniform_tensor({3, h, w}, 0.05, 0.95);

    SECTION("zero disparity reproduces the left view with a full mask") {
        RenderedView rv = render_stereo(left, Tensor::zeros({h, w}));
        REQUIRE(bitwise_equal(rv.right, left));
        for (int64_t i = 0; i < h * w; ++i) REQUIRE(rv.valid[i] == 1.0);
    }

    SECTION("constant disparity is a pure shift with unfilled right columns") {
        RenderedView rv = render_stereo(left, Tensor::full({h, w}, 4.0));
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    double got = rv.right[(c * h + y) * w + x];
                    if (x < w - 4)
                        REQUIRE(got == left[(c * h + y) * w + x + 4]);
                    else
                        REQUIRE(got == 0.0);  // nobody maps into the last 4 columns
                }
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                REQUIRE(rv.valid[y * w + x] == (x >= 4 ? 1.0 : 0.0));
    }

    SECTION("the larger disparity wins where two layers collide") {
        // background d=0 with a d=2 strip over columns 8..11
        Tensor disp = Tensor::zeros({h, w});
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 8; x <= 11; ++x) disp[y * w + x] = 2.0;
        RenderedView rv = render_stereo(left, disp);
        for (int64_t y = 0; y < h; ++y) {
            // strip pixels land on right columns 6..9 and beat the background
            for (int64_t x = 8; x <= 11; ++x)
                REQUIRE(rv.right[(0 * h + y) * w + x - 2] == left[(0 * h + y) * w + x]);
            // the background pixels they cover are occluded
            REQUIRE(rv.valid[y * w + 6] == 0.0);
            REQUIRE(rv.valid[y * w + 7] == 0.0);
            // right columns 10..11 receive no source at all
            REQUIRE(rv.right[(0 * h + y) * w + 10] == 0.0);
            REQUIRE(rv.right[(0 * h + y) * w + 11] == 0.0);
            // everything else keeps its correspondence
            for (int64_t x : {0L, 5L, 8L, 11L, 12L, 15L}) REQUIRE(rv.valid[y * w + x] == 1.0);
        }
    }

    SECTION("non-integer or negative disparities are rejected") {
        REQUIRE_THROWS_AS(render_stereo(left, Tensor::full({h, w}, 1.5)), std::invalid_argument);
        REQUIRE_THROWS_AS(render_stereo(left, Tensor::full({h, w}, -1.0)), std::invalid_argument);
        REQUIRE_THROWS_AS(render_stereo(left, Tensor::zeros({h, w + 1})), std::invalid_argument);
    }
}

TEST_CASE("stereogram generator") {
    SECTION("photometric consistency holds bitwise at every valid pixel, 100 seeds") {
        for (uint64_t seed = 0; seed < 100; ++seed) {
            StereoSample s = synth_stereogram(seed, 48, 96, 12, 4);
            const int64_t h = 48, w = 96;
            REQUIRE(s.left.shape() == std::vector<int64_t>{3, h, w});
            int64_t valid = 0;
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    if (s.valid_mask[y * w + x] == 0.0) continue;
                    ++valid;
                    int64_t d = static_cast<int64_t>(s.gt_disparity[y * w + x]);
                    REQUIRE(d >= 0);
                    for (int64_t c = 0; c < 3; ++c)
                        REQUIRE(s.left[(c * h + y) * w + x] == s.right[(c * h + y) * w + x - d]);
                }
            REQUIRE(valid > h * w / 2);  // the scene is mostly visible
        }
    }

    SECTION("same seed reproduces the sample bitwise") {
        StereoSample a = synth_stereogram(42, 32, 64, 7, 3);
        StereoSample b = synth_stereogram(42, 32, 64, 7, 3);
        REQUIRE(bitwise_equal(a.left, b.left));
        REQUIRE(bitwise_equal(a.right, b.right));
        REQUIRE(bitwise_equal(a.gt_disparity, b.gt_disparity));
        REQUIRE(bitwise_equal(a.valid_mask, b.valid_mask));
        StereoSample c = synth_stereogram(43, 32, 64, 7, 3);
        REQUIRE_FALSE(bitwise_equal(a.left, c.left));
    }

    SECTION("layer-free zero-disparity scene degenerates to identical views") {
        StereoSample s = synth_stereogram(5, 32, 32, 0, 0);
        REQUIRE(bitwise_equal(s.left, s.right));
        for (int64_t i = 0; i < s.valid_mask.size(); ++i) REQUIRE(s.valid_mask[i] == 1.0);
        for (int64_t i = 0; i < s.gt_disparity.size(); ++i) REQUIRE(s.gt_disparity[i] == 0.0);
    }

    SECTION("texture values stay inside the open unit interval") {
        StereoSample s = synth_stereogram(9, 32, 64, 7, 3);
        for (int64_t i = 0; i < s.left.size(); ++i) {
            REQUIRE(s.left[i] >= 0.02 - 1e-12);
            REQUIRE(s.left[i] <= 0.98 + 1e-12);
        }
    }

    SECTION("preconditions") {
        REQUIRE_THROWS_AS(synth_stereogram(0, 30, 64, 4, 1), std::invalid_argument);
        REQUIRE_THROWS_AS(synth_stereogram(0, 32, 60, 4, 1), std::invalid_argument);
        REQUIRE_THROWS_AS(synth_stereogram(0, 32, 64, 16, 1), std::invalid_argument);  // 16 !< 64/4
        REQUIRE_THROWS_AS(synth_stereogram(0, 32, 64, -1, 1), std::invalid_argument);
        REQUIRE_THROWS_AS(synth_stereogram(0, 32, 64, 4, -1), std::invalid_argument);
    }
}

TEST_CASE("dataset directory roundtrip") {
    fs::path dir = fresh_dir("sm_test_dataset");
    StereoSample s = synth_stereogram(3, 32, 64, 7, 3);
    save_sample(dir, "000003", s);
    save_sample(dir, "000001", synth_stereogram(1, 32, 64, 7, 3));

    auto stems = list_sample_stems(dir);
    REQUIRE(stems == std::vector<std::string>{"000001", "000003"});

    StereoSample back = load_sample(dir, "000003");
    REQUIRE(back.left.same_shape(s.left));
    REQUIRE(max_abs_diff(back.left, s.left) <= 1.0 / 510.0 + 1e-12);
    REQUIRE(max_abs_diff(back.right, s.right) <= 1.0 / 510.0 + 1e-12);
    // integer disparities fit float32 exactly; masks are bytes
    REQUIRE(bitwise_equal(back.gt_disparity, s.gt_disparity));
    REQUIRE(bitwise_equal(back.valid_mask, s.valid_mask));
    REQUIRE(back.calib.focal_px == 320.0);
    REQUIRE(back.calib.baseline_mm == 5.0);

    REQUIRE_THROWS_WITH(list_sample_stems(dir / "nope"),
                        Catch::Matchers::ContainsSubstring("not found"));
}

TEST_CASE("augmentation crops all planes through one window and normalizes") {
    StereoSample s = synth_stereogram(11, 64, 128, 12, 4);
    std::vector<StereoSample> train;
    for (uint64_t k = 0; k < 8; ++k) train.push_back(synth_stereogram(k, 64, 128, 12, 4));
    ChannelStats stats = compute_stats(train);

    SECTION("window bookkeeping") {
        Rng probe(77);
        int64_t y0 = probe.uniform_int(0, 64 - 32);
        int64_t x0 = probe.uniform_int(0, 128 - 64);
        Rng rng(77);
        StereoSample a = augment(s, 32, 64, stats, rng);
        REQUIRE(a.left.shape() == std::vector<int64_t>{3, 32, 64});
        REQUIRE(a.gt_disparity.shape() == std::vector<int64_t>{32, 64});
        for (int64_t y = 0; y < 32; ++y)
            for (int64_t x = 0; x < 64; ++x) {
                REQUIRE(a.gt_disparity[y * 64 + x] == s.gt_disparity[(y0 + y) * 128 + x0 + x]);
                REQUIRE(a.valid_mask[y * 64 + x] == s.valid_mask[(y0 + y) * 128 + x0 + x]);
            }
        // normalization is (x - mean)/std of the same window
        double got = a.left[5 * 64 + 6];
        double raw = s.left[(0 * 64 + y0 + 5) * 128 + x0 + 6];
        REQUIRE(got == Catch::Approx((raw - stats.mean[0]) / stats.stdev[0]).epsilon(1e-14));
    }

    SECTION("held-out normalized statistics are near zero mean, unit spread") {
        std::vector<StereoSample> held;
        for (uint64_t k = 100; k < 110; ++k) held.push_back(synth_stereogram(k, 64, 128, 12, 4));
        std::vector<StereoSample> normed;
        Rng rng(5);
        for (const StereoSample& hs : held) normed.push_back(augment(hs, 64, 128, stats, rng));
        ChannelStats after = compute_stats(normed);
        for (size_t c = 0; c < 3; ++c) {
            REQUIRE(std::abs(after.mean[c]) < 0.02);
            REQUIRE(std::abs(after.stdev[c] - 1.0) < 0.05);
        }
    }

    SECTION("crop validation") {
        Rng rng(1);
        REQUIRE_THROWS_AS(augment(s, 20, 64, stats, rng), std::invalid_argument);
        REQUIRE_THROWS_AS(augment(s, 96, 64, stats, rng), std::invalid_argument);
        REQUIRE_NOTHROW(augment(s, 64, 128, stats, rng));  // full-frame crop is legal
    }
}
