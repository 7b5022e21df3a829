// SPDX-License-Identifier: Apache-2.0
//
// Volume aggregation: the x4 trilinear lift against a direct per-cell oracle
// and its grid-alignment guarantees, the hourglass/flat trunk, the prediction
// heads, and soft arg-min calibration of the disparity readout.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "stereomamba/aggregation.hpp"
#include "fd_check.hpp"

using namespace stereomamba;

namespace {

// Direct trilinear oracle, written corner-by-corner with clamped indices.
Tensor upsample_oracle(const Tensor& in) {
    const int64_t d = in.dim(0), h = in.dim(1), w = in.dim(2);
    Tensor out({d * 4, h * 4, w * 4});
    auto sample = [&](int64_t z, int64_t y, int64_t x) {
        z = std::min(z, d - 1);
        y = std::min(y, h - 1);
        x = std::min(x, w - 1);
        return in[(z * h + y) * w + x];
    };
    for (int64_t z = 0; z < d * 4; ++z)
        for (int64_t y = 0; y < h * 4; ++y)
            for (int64_t x = 0; x < w * 4; ++x) {
                double fz = std::min(z / 4.0, static_cast<double>(d - 1));
                double fy = std::min(y / 4.0, static_cast<double>(h - 1));
                double fx = std::min(x / 4.0, static_cast<double>(w - 1));
                int64_t z0 = static_cast<int64_t>(fz), y0 = static_cast<int64_t>(fy),
                        x0 = static_cast<int64_t>(fx);
                double az = fz - z0, ay = fy - y0, ax = fx - x0;
                double acc = 0.0;
                for (int c = 0; c < 8; ++c) {
                    int64_t dz = c & 1, dy = (c >> 1) & 1, dx = (c >> 2) & 1;
                    double wgt = (dz ? az : 1 - az) * (dy ? ay : 1 - ay) * (dx ? ax : 1 - ax);
                    acc += wgt * sample(z0 + dz, y0 + dy, x0 + dx);
                }
                out[(z * h * 4 + y) * w * 4 + x] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("x4 upsampling matches the trilinear oracle") {
    Rng rng(601);
    Tensor in = rng.uniform_tensor({2, 3, 4}, -2.0, 2.0);
    Tape t;
    const Tensor& got = t.value(ops::upsample3d_x4(t, t.leaf(in)));
    Tensor want = upsample_oracle(in);
    REQUIRE(got.same_shape(want));
    REQUIRE(max_abs_diff(got, want) < 1e-14);
}

TEST_CASE("x4 upsampling grid alignment") {
    Rng rng(602);
    Tensor in = rng.uniform_tensor({3, 2, 5}, -1.0, 1.0);
    Tape t;
    const Tensor& up = t.value(ops::upsample3d_x4(t, t.leaf(in)));

    SECTION("coarse cells land exactly on every fourth fine cell") {
        for (int64_t z = 0; z < 3; ++z)
            for (int64_t y = 0; y < 2; ++y)
                for (int64_t x = 0; x < 5; ++x)
                    REQUIRE(up[((4 * z) * 8 + 4 * y) * 20 + 4 * x] == in[(z * 2 + y) * 5 + x]);
    }

    SECTION("a per-cell index ramp upsamples to the quarter-index ramp") {
        Tensor ramp({4, 1, 1});
        for (int64_t k = 0; k < 4; ++k) ramp[k] = static_cast<double>(k);
        Tape t2;
        const Tensor& r = t2.value(ops::upsample3d_x4(t2, t2.leaf(ramp)));  // [16, 4, 4]
        for (int64_t z = 0; z < 16; ++z) {
            double want = std::min(z / 4.0, 3.0);  // clamped past the last cell
            REQUIRE(r[z * 16] == Catch::Approx(want).margin(1e-15));
        }
    }

    SECTION("constant volumes stay constant") {
        Tape t2;
        const Tensor& c = t2.value(ops::upsample3d_x4(t2, t2.leaf(Tensor::full({2, 2, 2}, 0.7))));
        for (int64_t i = 0; i < c.size(); ++i) REQUIRE(c[i] == Catch::Approx(0.7).margin(1e-15));
    }

    SECTION("rank is validated") {
        Tape t2;
        REQUIRE_THROWS_AS(ops::upsample3d_x4(t2, t2.leaf(Tensor::zeros({2, 2}))),
                          std::invalid_argument);
    }
}

TEST_CASE("x4 upsampling gradients match finite differences") {
    Rng rng(603);
    Tensor in = rng.uniform_tensor({2, 2, 3}, -1.0, 1.0);
    Tensor wloss = rng.uniform_tensor({8 * 8 * 12}, -1.0, 1.0);
    fdtest::fd_check({in}, [&](Tape& t, const std::vector<NodeId>& ids) {
        NodeId up = ops::upsample3d_x4(t, ids[0]);
        NodeId flat = ops::reshape(t, up, {t.value(up).size()});
        return ops::sum_all(t, ops::mul(t, flat, t.constant(wloss)));
    });
}

TEST_CASE("soft arg-min readout is calibrated in full-resolution pixels") {
    SECTION("a sharp cost minimum at quarter cell k reads out near 4k") {
        const int64_t dq = 8, h = 2, w = 2, kstar = 4;
        Tensor cost = Tensor::full({dq, h, w}, 10.0);
        for (int64_t i = 0; i < h * w; ++i) cost[kstar * h * w + i] = 0.0;
        Tape t;
        const Tensor& disp = t.value(disparity_regression(t, t.leaf(cost)));
        REQUIRE(disp.shape() == std::vector<int64_t>{4 * h, 4 * w});
        for (int64_t i = 0; i < disp.size(); ++i)
            REQUIRE(disp[i] == Catch::Approx(4.0 * kstar).margin(0.02));
    }

    SECTION("a flat cost reads out the mid-range expectation") {
        const int64_t dq = 4;
        Tape t;
        const Tensor& disp = t.value(disparity_regression(t, t.leaf(Tensor::full({dq, 1, 2}, 3.0))));
        for (int64_t i = 0; i < disp.size(); ++i)
            REQUIRE(disp[i] == Catch::Approx((4.0 * dq - 1.0) / 2.0).epsilon(1e-12));
    }

    SECTION("readout stays inside the representable disparity range") {
        Rng rng(604);
        Tape t;
        const Tensor& disp =
            t.value(disparity_regression(t, t.leaf(rng.uniform_tensor({6, 2, 3}, -3.0, 3.0))));
        for (int64_t i = 0; i < disp.size(); ++i) {
            REQUIRE(disp[i] >= 0.0);
            REQUIRE(disp[i] <= 23.0);  // 4 * 6 - 1
        }
    }
}

TEST_CASE("hourglass keeps shapes and differentiates") {
    ParamRegistry reg;
    Hourglass hg(reg, 31, "hg", 2);
    Rng rng(605);
    Tensor x = rng.uniform_tensor({2, 4, 4, 8}, -1.0, 1.0);

    Tape t;
    NodeId y = hg(t, t.leaf(x));
    REQUIRE(t.value(y).shape() == x.shape());

    Tensor wloss = rng.uniform_tensor({x.size()}, -1.0, 1.0);
    fdtest::fd_check_params(reg, [&](Tape& tp) {
        NodeId out = hg(tp, tp.constant(x));
        NodeId flat = ops::reshape(tp, out, {x.size()});
        return ops::sum_all(tp, ops::mul(tp, flat, tp.constant(wloss)));
    });
}

TEST_CASE("aggregation trunk picks hourglass or flat stacks from the disparity extent") {
    SECTION("divisible-by-four extents use hourglasses") {
        ParamRegistry reg;
        CostAggregation agg(reg, 32, /*in_groups=*/3, /*base=*/4, /*d_q=*/8);
        REQUIRE(agg.hourglass());
        Rng rng(606);
        Tape t;
        auto costs = agg.forward(t, t.constant(rng.uniform_tensor({3, 8, 8, 8}, -1.0, 1.0)), true);
        REQUIRE(costs.size() == 4);
        for (NodeId c : costs) REQUIRE(t.value(c).shape() == std::vector<int64_t>{8, 8, 8});

        // inference asks for the deepest head only, and it matches training's
        Tape t2;
        Tensor vol = rng.uniform_tensor({3, 8, 8, 8}, -1.0, 1.0);
        auto all = agg.forward(t2, t2.constant(vol), true);
        Tape t3;
        auto last = agg.forward(t3, t3.constant(vol), false);
        REQUIRE(last.size() == 1);
        REQUIRE(bitwise_equal(t2.value(all[3]), t3.value(last[0])));
    }

    SECTION("other extents fall back to flat stacks") {
        ParamRegistry reg;
        CostAggregation agg(reg, 33, 3, 4, 6);
        REQUIRE_FALSE(agg.hourglass());
        Rng rng(607);
        Tape t;
        auto costs = agg.forward(t, t.constant(rng.uniform_tensor({3, 6, 5, 7}, -1.0, 1.0)), true);
        REQUIRE(costs.size() == 4);
        for (NodeId c : costs) REQUIRE(t.value(c).shape() == std::vector<int64_t>{6, 5, 7});
    }

    SECTION("construction and input validation") {
        ParamRegistry reg;
        REQUIRE_THROWS_AS(CostAggregation(reg, 34, 3, 3, 8), std::invalid_argument);  // odd base
        ParamRegistry reg2;
        CostAggregation agg(reg2, 34, 3, 4, 8);
        Tape t;
        REQUIRE_THROWS_AS(agg.forward(t, t.constant(Tensor::zeros({3, 8, 8})), true),
                          std::invalid_argument);
        REQUIRE_THROWS_AS(agg.forward(t, t.constant(Tensor::zeros({3, 8, 6, 8})), true),
                          std::invalid_argument);  // spatial extent not divisible by 4
    }

    SECTION("same seed builds the same trunk") {
        ParamRegistry ra, rb;
        CostAggregation aa(ra, 35, 2, 4, 4), ab(rb, 35, 2, 4, 4);
        Rng rng(608);
        Tensor vol = rng.uniform_tensor({2, 4, 4, 4}, -1.0, 1.0);
        Tape ta, tb;
        REQUIRE(bitwise_equal(ta.value(aa.forward(ta, ta.constant(vol), false)[0]),
                              tb.value(ab.forward(tb, tb.constant(vol), false)[0])));
    }
}

TEST_CASE("aggregation gradients match finite differences") {
    ParamRegistry reg;
    CostAggregation agg(reg, 36, 2, 2, 4);
    REQUIRE(agg.hourglass());
    Rng rng(609);
    Tensor vol = rng.uniform_tensor({2, 4, 4, 4}, -1.0, 1.0);
    Tensor wloss = rng.uniform_tensor({4 * 4 * 4}, -1.0, 1.0);
    fdtest::fd_check_params(reg, [&](Tape& t) {
        auto costs = agg.forward(t, t.constant(vol), true);
        NodeId total = -1;
        for (size_t i = 0; i < costs.size(); ++i) {
            NodeId flat = ops::reshape(t, costs[i], {t.value(costs[i]).size()});
            NodeId term = ops::sum_all(t, ops::mul(t, flat, t.constant(wloss)));
            term = ops::scale(t, term, 0.3 + 0.2 * static_cast<double>(i));
            total = i == 0 ? term : ops::add(t, total, term);
        }
        return total;
        // step 1e-6: with zero-initialized biases some pre-activations sit a
        // few 1e-6 from the relu kink, which a 1e-5 probe would step across
    }, /*max_coords_per_param=*/2, /*seed=*/4321, /*step=*/1e-6);
}
