// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient harness. Rebuilds the forward pass from scratch
// for every probe so the analytic tape never shares state with the numeric
// estimate.

#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "stereomamba/tape.hpp"

namespace fdtest {

using stereomamba::NodeId;
using stereomamba::Rng;
using stereomamba::Tape;
using stereomamba::Tensor;

// Central differences step across an activation kink whenever some
// pre-activation lies within step*gain of zero, and deep nets have enough
// relu cells to make that routine. A kink artifact disappears once the step
// drops below the kink distance; a genuine adjoint bug is step-independent.
// So retry shrinking the step before declaring a mismatch. The absolute term
// grows with the shrink factor because roundoff in the quotient scales with
// 1/step.
template <typename EvalShift>
bool fd_match_ladder(EvalShift&& eval_shift, double ad, double step, double atol, double rtol,
                     double* fd_out, double* tol_out) {
    double factor = 1.0;
    for (int rung = 0; rung < 3; ++rung, factor *= 8.0) {
        const double h = step / factor;
        const double fd = (eval_shift(h) - eval_shift(-h)) / (2.0 * h);
        const double tol = atol * factor + rtol * std::max(std::abs(fd), std::abs(ad));
        *fd_out = fd;
        *tol_out = tol;
        if (std::abs(fd - ad) <= tol) return true;
    }
    return false;
}

// build(tape, leaf_ids) must return a scalar loss node
template <typename Build>
void fd_check(const std::vector<Tensor>& inputs, Build build, int64_t max_coords_per_input = -1,
              uint64_t seed = 1234, double step = 1e-5, double atol = 1e-8, double rtol = 1e-5) {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(inputs.size());
    for (const Tensor& in : inputs) ids.push_back(tape.leaf(in.clone()));
    NodeId loss = build(tape, ids);
    REQUIRE(tape.value(loss).size() == 1);
    tape.backward(loss);
    std::vector<Tensor> grads;
    for (NodeId id : ids) {
        Tensor* g = tape.grad_ptr(id);
        REQUIRE(g != nullptr);
        grads.push_back(g->clone());
    }

    auto eval = [&](const std::vector<Tensor>& xs) {
        Tape tp;
        std::vector<NodeId> lids;
        for (const Tensor& v : xs) lids.push_back(tp.leaf(v.clone()));
        return tp.value(build(tp, lids))[0];
    };

    Rng rng(seed);
    for (size_t k = 0; k < inputs.size(); ++k) {
        const int64_t n = inputs[k].size();
        std::vector<int64_t> coords;
        if (max_coords_per_input < 0 || n <= max_coords_per_input) {
            coords.resize(static_cast<size_t>(n));
            std::iota(coords.begin(), coords.end(), 0);
        } else {
            for (int64_t j = 0; j < max_coords_per_input; ++j)
                coords.push_back(rng.uniform_int(0, n - 1));
        }
        for (int64_t i : coords) {
            auto eval_shift = [&](double h) {
                std::vector<Tensor> xs;
                xs.reserve(inputs.size());
                for (const Tensor& v : inputs) xs.push_back(v.clone());
                xs[k][i] += h;
                return eval(xs);
            };
            double ad = grads[k][i], fd = 0.0, tol = 0.0;
            bool ok = fd_match_ladder(eval_shift, ad, step, atol, rtol, &fd, &tol);
            INFO("input " << k << " coord " << i << ": fd=" << fd << " ad=" << ad << " tol=" << tol);
            REQUIRE(ok);
        }
    }
}

// Same probe, but through registry-owned parameters: forward() must rebuild
// the whole graph from the registry's current values on a fresh tape.
template <typename Forward>
void fd_check_params(stereomamba::ParamRegistry& reg, Forward forward, int64_t max_coords_per_param = 4,
                     uint64_t seed = 4321, double step = 1e-5, double atol = 1e-8, double rtol = 1e-5) {
    Tape tape;
    NodeId loss = forward(tape);
    REQUIRE(tape.value(loss).size() == 1);
    tape.backward(loss);
    auto params = reg.all();
    std::vector<Tensor> grads;
    for (stereomamba::Parameter* p : params) grads.push_back(tape.grad_of(*p));

    auto eval = [&] {
        Tape tp;
        return tp.value(forward(tp))[0];
    };

    Rng rng(seed);
    for (size_t k = 0; k < params.size(); ++k) {
        stereomamba::Parameter& p = *params[k];
        const int64_t n = p.value.size();
        std::vector<int64_t> coords;
        if (n <= max_coords_per_param) {
            coords.resize(static_cast<size_t>(n));
            std::iota(coords.begin(), coords.end(), 0);
        } else {
            for (int64_t j = 0; j < max_coords_per_param; ++j) coords.push_back(rng.uniform_int(0, n - 1));
        }
        for (int64_t i : coords) {
            const double orig = p.value[i];
            auto eval_shift = [&](double h) {
                p.value[i] = orig + h;
                double l = eval();
                p.value[i] = orig;
                return l;
            };
            double ad = grads[k][i], fd = 0.0, tol = 0.0;
            bool ok = fd_match_ladder(eval_shift, ad, step, atol, rtol, &fd, &tol);
            INFO("param " << p.name << " coord " << i << ": fd=" << fd << " ad=" << ad << " tol=" << tol);
            REQUIRE(ok);
        }
    }
}

}  // namespace fdtest
