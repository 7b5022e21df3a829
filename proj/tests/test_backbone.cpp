// SPDX-License-Identifier: Apache-2.0
//
// Feature extractor: traversal plumbing against a from-scratch re-derivation,
// pyramid geometry, weight sharing across views, and parameter-space
// finite-difference checks on a reduced configuration.

#include <catch2/catch_amalgamated.hpp>

#include "fd_check.hpp"
#include "stereomamba/backbone.hpp"

using namespace stereomamba;
using fdtest::fd_check_params;

namespace {

double sp(double v) { return std::log1p(std::exp(v)); }

// one traversal of the 2-d scan, redone with plain loops + the pure recurrence
Tensor manual_direction(const Tensor& x, ParamRegistry& reg, const std::string& hp, bool col_major,
                        bool reversed) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2), T = H * W;
    Tensor seq({C, T});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t xx = 0; xx < W; ++xx)
                seq.at(c, col_major ? xx * H + y : y * W + xx) = x.at(c, y, xx);
    if (reversed) {
        Tensor rev({C, T});
        for (int64_t c = 0; c < C; ++c)
            for (int64_t t = 0; t < T; ++t) rev.at(c, t) = seq.at(c, T - 1 - t);
        seq = rev;
    }
    const Tensor& wb = reg.find(hp + ".b.w")->value;
    const Tensor& bb = reg.find(hp + ".b.b")->value;
    const Tensor& wc = reg.find(hp + ".c.w")->value;
    const Tensor& bc = reg.find(hp + ".c.b")->value;
    const Tensor& wd = reg.find(hp + ".dt.w")->value;
    const Tensor& bd = reg.find(hp + ".dt.b")->value;
    const double rate = sp(reg.find(hp + ".a")->value[0]);
    const int64_t N = wb.dim(1);
    Tensor bmat({T, N}), cmat({T, N}), a({T});
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t n = 0; n < N; ++n) {
            double vb = bb[n], vc = bc[n];
            for (int64_t c = 0; c < C; ++c) {
                vb += seq.at(c, t) * wb.at(c, n);
                vc += seq.at(c, t) * wc.at(c, n);
            }
            bmat.at(t, n) = vb;
            cmat.at(t, n) = vc;
        }
        double dtr = bd[0];
        for (int64_t c = 0; c < C; ++c) dtr += seq.at(c, t) * wd.at(c, 0);
        a[t] = std::exp(-rate * sp(dtr));
    }
    Tensor y = ssm_scan_forward(a, bmat, cmat, seq);
    if (reversed) {
        Tensor rev({C, T});
        for (int64_t c = 0; c < C; ++c)
            for (int64_t t = 0; t < T; ++t) rev.at(c, t) = y.at(c, T - 1 - t);
        y = rev;
    }
    Tensor out({C, H, W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t yy = 0; yy < H; ++yy)
            for (int64_t xx = 0; xx < W; ++xx)
                out.at(c, yy, xx) = y.at(c, col_major ? xx * H + yy : yy * W + xx);
    return out;
}

BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.c0 = 4;
    cfg.c1 = 4;
    cfg.c2 = 6;
    cfg.c3 = 8;
    cfg.c4 = 4;
    cfg.n_state = 2;
    cfg.blocks_per_stage = 1;
    cfg.ffn_expand = 2;
    return cfg;
}

}  // namespace

TEST_CASE("2-d scan traversals match an independent re-derivation") {
    ParamRegistry reg;
    Ss2d scan(reg, 77, "s", 3, 2);
    Ss2dProbe probe;
    scan.probe = &probe;

    Rng rng(5);
    Tensor x = rng.uniform_tensor({3, 4, 5}, -1, 1);
    Tape t;
    NodeId out = scan(t, t.leaf(x.clone()));
    REQUIRE(probe.direction_outputs.size() == 4);

    const std::array<std::tuple<const char*, bool, bool>, 4> specs{
        std::tuple{"s.rowf", false, false},
        std::tuple{"s.rowr", false, true},
        std::tuple{"s.colf", true, false},
        std::tuple{"s.colr", true, true},
    };
    Tensor total = Tensor::zeros({3, 4, 5});
    for (size_t i = 0; i < specs.size(); ++i) {
        auto [hp, col, rev] = specs[i];
        Tensor ref = manual_direction(x, reg, hp, col, rev);
        INFO("traversal " << hp);
        REQUIRE(max_abs_diff(probe.direction_outputs[i], ref) < 1e-12);
        for (int64_t j = 0; j < total.size(); ++j) total[j] += ref[j];
    }
    REQUIRE(max_abs_diff(t.value(out), total) < 1e-12);
}

TEST_CASE("state-space block keeps shape and differentiates cleanly") {
    ParamRegistry reg;
    VssBlock block(reg, 11, "blk", 3, 2, 2);
    Rng rng(7);
    Tensor x = rng.uniform_tensor({3, 4, 4}, -1, 1);
    {
        Tape t;
        NodeId y = block(t, t.leaf(x.clone()));
        REQUIRE(t.value(y).same_shape(x));
    }
    Tensor w = rng.uniform_tensor({3, 4, 4}, -1, 1);
    fd_check_params(reg, [&](Tape& t) {
        NodeId y = block(t, t.leaf(x.clone()));
        return ops::sum_all(t, ops::mul(t, y, t.constant(w.clone())));
    });
}

TEST_CASE("backbone pyramid has quarter/eighth/sixteenth geometry") {
    for (bool use_scan : {true, false}) {
        ParamRegistry reg;
        BackboneConfig cfg = tiny_config();
        Rng rng(13);
        Tensor img = rng.uniform_tensor({3, 32, 48}, 0, 1);
        Tape t;
        ViewPyramid p;
        if (use_scan) {
            ScanBackbone bb(reg, 3, cfg);
            p = bb.forward(t, t.leaf(img.clone()));
        } else {
            PlainConvBackbone bb(reg, 3, cfg);
            p = bb.forward(t, t.leaf(img.clone()));
        }
        CHECK(t.value(p.f0).shape() == Shape{4, 8, 12});
        CHECK(t.value(p.f1).shape() == Shape{4, 8, 12});
        CHECK(t.value(p.f2).shape() == Shape{6, 4, 6});
        CHECK(t.value(p.f3).shape() == Shape{8, 2, 3});
    }
}

TEST_CASE("backbone rejects wrong channel count and off-grid sizes") {
    ParamRegistry reg;
    ScanBackbone bb(reg, 3, tiny_config());
    Tape t;
    REQUIRE_THROWS_AS(bb.forward(t, t.leaf(Tensor::zeros({1, 32, 32}))), std::invalid_argument);
    REQUIRE_THROWS_AS(bb.forward(t, t.leaf(Tensor::zeros({3, 30, 32}))), std::invalid_argument);
    REQUIRE_THROWS_AS(bb.forward(t, t.leaf(Tensor::zeros({3, 32, 40}))), std::invalid_argument);
}

TEST_CASE("same seed gives bitwise identical parameters and features") {
    BackboneConfig cfg = tiny_config();
    ParamRegistry r1, r2;
    ScanBackbone b1(r1, 99, cfg), b2(r2, 99, cfg);
    auto p1 = r1.all(), p2 = r2.all();
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) {
        REQUIRE(p1[i]->name == p2[i]->name);
        REQUIRE(bitwise_equal(p1[i]->value, p2[i]->value));
    }
    Rng rng(1);
    Tensor img = rng.uniform_tensor({3, 16, 16}, 0, 1);
    Tape ta, tb;
    REQUIRE(bitwise_equal(ta.value(b1.forward(ta, ta.leaf(img.clone())).f3),
                          tb.value(b2.forward(tb, tb.leaf(img.clone())).f3)));
}

TEST_CASE("two forwards through shared weights accumulate both gradients") {
    ParamRegistry reg;
    ScanBackbone bb(reg, 21, tiny_config());
    Rng rng(2);
    Tensor li = rng.uniform_tensor({3, 16, 16}, 0, 1);
    Tensor ri = rng.uniform_tensor({3, 16, 16}, 0, 1);
    Parameter* stem = reg.find("fe.stem.conv.w");
    REQUIRE(stem != nullptr);

    Tape t;
    NodeId both = ops::add(t, ops::sum_all(t, bb.forward(t, t.leaf(li.clone())).f3),
                           ops::sum_all(t, bb.forward(t, t.leaf(ri.clone())).f3));
    t.backward(both);
    Tensor g_shared = t.grad_of(*stem);

    Tape ta;
    ta.backward(ops::sum_all(ta, bb.forward(ta, ta.leaf(li.clone())).f3));
    Tape tb;
    tb.backward(ops::sum_all(tb, bb.forward(tb, tb.leaf(ri.clone())).f3));
    Tensor g_sum = ta.grad_of(*stem);
    Tensor g_r = tb.grad_of(*stem);
    for (int64_t i = 0; i < g_sum.size(); ++i) g_sum[i] += g_r[i];
    REQUIRE(max_abs_diff(g_shared, g_sum) < 1e-12);
}

TEST_CASE("cross-view attention is symmetric under view swap") {
    ParamRegistry reg;
    BackboneConfig cfg = tiny_config();
    CrossViewAttention cross(reg, 31, cfg);
    Rng rng(3);
    Tensor f1l = rng.uniform_tensor({4, 4, 6}, -1, 1);
    Tensor f1r = rng.uniform_tensor({4, 4, 6}, -1, 1);
    Tensor f0l = rng.uniform_tensor({4, 4, 6}, -1, 1);
    Tensor f0r = rng.uniform_tensor({4, 4, 6}, -1, 1);

    Tape t;
    auto [al, ar] = cross.forward(t, t.leaf(f1l.clone()), t.leaf(f1r.clone()), t.leaf(f0l.clone()),
                                  t.leaf(f0r.clone()));
    Tape t2;
    auto [bl, br] = cross.forward(t2, t2.leaf(f1r.clone()), t2.leaf(f1l.clone()), t2.leaf(f0r.clone()),
                                  t2.leaf(f0l.clone()));
    REQUIRE(bitwise_equal(t.value(al), t2.value(br)));
    REQUIRE(bitwise_equal(t.value(ar), t2.value(bl)));
    REQUIRE(t.value(al).shape() == Shape{4, 4, 6});

    // the left output must actually read the right view
    Tensor f1r2 = f1r.clone();
    f1r2[5] += 0.5;
    Tape t3;
    auto [cl, cr] = cross.forward(t3, t3.leaf(f1l.clone()), t3.leaf(f1r2.clone()), t3.leaf(f0l.clone()),
                                  t3.leaf(f0r.clone()));
    (void)cr;
    REQUIRE(max_abs_diff(t.value(al), t3.value(cl)) > 1e-9);
}

TEST_CASE("full extractor differentiates end to end on a reduced setup") {
    ParamRegistry reg;
    BackboneConfig cfg = tiny_config();
    FeatureExtractor fe(reg, 41, cfg, true);
    Rng rng(4);
    Tensor li = rng.uniform_tensor({3, 16, 16}, 0, 1);
    Tensor ri = rng.uniform_tensor({3, 16, 16}, 0, 1);
    Tensor w = rng.uniform_tensor({4, 4, 4}, -1, 1);  // over f4_l [c4, 4, 4]

    {
        Tape t;
        auto [fl, fr] = fe.forward(t, t.leaf(li.clone()), t.leaf(ri.clone()));
        REQUIRE(t.value(fl.f4).shape() == Shape{4, 4, 4});
        REQUIRE(t.value(fr.f4).shape() == Shape{4, 4, 4});
        REQUIRE(t.value(fl.f3).shape() == Shape{8, 1, 1});
    }
    fd_check_params(
        reg,
        [&](Tape& t) {
            auto [fl, fr] = fe.forward(t, t.leaf(li.clone()), t.leaf(ri.clone()));
            NodeId y = ops::add(t, fl.f4, fr.f4);
            return ops::sum_all(t, ops::mul(t, y, t.constant(w.clone())));
        },
        2);
}
