// SPDX-License-Identifier: Apache-2.0
//
// Thin parameter-owning wrappers around the taped ops. Construction registers
// tensors into a ParamRegistry under a hierarchical dotted name; the init
// stream is keyed by (seed, name hash), so values do not depend on the order
// modules happen to be built in.

#pragma once

#include "stereomamba/conv.hpp"

namespace stereomamba {

inline Parameter& add_fan_in_param(ParamRegistry& reg, uint64_t seed, const std::string& name,
                                   Shape shape, int64_t fan_in) {
    Rng rng(derive_seed(seed, fnv1a64(name)));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return reg.add(name, rng.uniform_tensor(std::move(shape), -bound, bound));
}

inline Parameter& add_const_param(ParamRegistry& reg, const std::string& name, Shape shape, double v) {
    return reg.add(name, Tensor::full(std::move(shape), v));
}

struct Conv2dLayer {
    Parameter* w;
    Parameter* b;
    int64_t stride, pad;

    Conv2dLayer(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t cin, int64_t cout,
                int64_t k, int64_t stride_, int64_t pad_)
        : w(&add_fan_in_param(reg, seed, prefix + ".w", {cout, cin, k, k}, cin * k * k)),
          b(&add_const_param(reg, prefix + ".b", {cout}, 0.0)),
          stride(stride_),
          pad(pad_) {}

    NodeId operator()(Tape& t, NodeId x) const {
        return ops::conv2d(t, x, t.param(*w), t.param(*b), stride, pad);
    }
};

struct TransposeConv2dLayer {
    Parameter* w;
    Parameter* b;
    int64_t stride, pad;

    TransposeConv2dLayer(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t cin,
                         int64_t cout, int64_t k, int64_t stride_, int64_t pad_)
        : w(&add_fan_in_param(reg, seed, prefix + ".w", {cin, cout, k, k}, cin * k * k)),
          b(&add_const_param(reg, prefix + ".b", {cout}, 0.0)),
          stride(stride_),
          pad(pad_) {}

    NodeId operator()(Tape& t, NodeId x) const {
        return ops::transpose2d(t, x, t.param(*w), t.param(*b), stride, pad);
    }
};

struct DepthwiseLayer {
    Parameter* w;
    Parameter* b;
    int64_t stride, pad;

    DepthwiseLayer(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t c, int64_t k,
                   int64_t stride_, int64_t pad_)
        : w(&add_fan_in_param(reg, seed, prefix + ".w", {c, k, k}, k * k)),
          b(&add_const_param(reg, prefix + ".b", {c}, 0.0)),
          stride(stride_),
          pad(pad_) {}

    NodeId operator()(Tape& t, NodeId x) const {
        return ops::depthwise2d(t, x, t.param(*w), t.param(*b), stride, pad);
    }
};

struct Conv3dLayer {
    Parameter* w;
    Parameter* b;
    int64_t stride, pad;

    Conv3dLayer(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t cin, int64_t cout,
                int64_t k, int64_t stride_, int64_t pad_)
        : w(&add_fan_in_param(reg, seed, prefix + ".w", {cout, cin, k, k, k}, cin * k * k * k)),
          b(&add_const_param(reg, prefix + ".b", {cout}, 0.0)),
          stride(stride_),
          pad(pad_) {}

    NodeId operator()(Tape& t, NodeId x) const {
        return ops::conv3d(t, x, t.param(*w), t.param(*b), stride, pad);
    }
};

struct TransposeConv3dLayer {
    Parameter* w;
    Parameter* b;
    int64_t stride, pad;

    TransposeConv3dLayer(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t cin,
                         int64_t cout, int64_t k, int64_t stride_, int64_t pad_)
        : w(&add_fan_in_param(reg, seed, prefix + ".w", {cin, cout, k, k, k}, cin * k * k * k)),
          b(&add_const_param(reg, prefix + ".b", {cout}, 0.0)),
          stride(stride_),
          pad(pad_) {}

    NodeId operator()(Tape& t, NodeId x) const {
        return ops::transpose3d(t, x, t.param(*w), t.param(*b), stride, pad);
    }
};

struct LinearLayer {
    Parameter* w;
    Parameter* b;

    LinearLayer(ParamRegistry& reg, uint64_t seed, const std::string& prefix, int64_t in, int64_t out)
        : w(&add_fan_in_param(reg, seed, prefix + ".w", {in, out}, in)),
          b(&add_const_param(reg, prefix + ".b", {out}, 0.0)) {}

    NodeId operator()(Tape& t, NodeId x) const { return ops::linear(t, x, t.param(*w), t.param(*b)); }
};

struct LayerNormLayer {
    Parameter* gain;
    Parameter* bias;
    int axis;

    LayerNormLayer(ParamRegistry& reg, const std::string& prefix, int64_t extent, int axis_)
        : gain(&add_const_param(reg, prefix + ".g", {extent}, 1.0)),
          bias(&add_const_param(reg, prefix + ".b", {extent}, 0.0)),
          axis(axis_) {}

    NodeId operator()(Tape& t, NodeId x) const {
        return ops::layer_norm(t, x, t.param(*gain), t.param(*bias), axis);
    }
};

struct RmsNormLayer {
    Parameter* gain;
    int axis;

    RmsNormLayer(ParamRegistry& reg, const std::string& prefix, int64_t extent, int axis_)
        : gain(&add_const_param(reg, prefix + ".g", {extent}, 1.0)), axis(axis_) {}

    NodeId operator()(Tape& t, NodeId x) const { return ops::rms_norm(t, x, t.param(*gain), axis); }
};

}  // namespace stereomamba
