// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff tape. Every differentiable op pushes one node holding
// the forward value plus a closure that scatters the output gradient back to
// the node's inputs. backward() walks the nodes once in reverse order; it can
// only be run once per tape.

#pragma once

#include <deque>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stereomamba/tensor.hpp"

namespace stereomamba {

using NodeId = int32_t;

// A named trainable leaf. Parameters live in a ParamRegistry owned by the
// model; tapes reference them per step and hand gradients back by name.
struct Parameter {
    std::string name;
    Tensor value;
};

class ParamRegistry {
public:
    Parameter& add(std::string name, Tensor init) {
        if (by_name_.count(name))
            throw std::invalid_argument("duplicate parameter name: " + name);
        params_.push_back(Parameter{std::move(name), std::move(init)});
        Parameter& p = params_.back();
        by_name_[p.name] = &p;
        return p;
    }

    Parameter* find(const std::string& name) {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    // registration order, which is also the deterministic init/update order
    std::vector<Parameter*> all() {
        std::vector<Parameter*> out;
        out.reserve(params_.size());
        for (Parameter& p : params_) out.push_back(&p);
        return out;
    }

    size_t count() const { return params_.size(); }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const Parameter& p : params_) n += p.value.size();
        return n;
    }

private:
    std::deque<Parameter> params_;  // stable addresses
    std::unordered_map<std::string, Parameter*> by_name_;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&)>;

    Tape() = default;
    // grads_enabled=false records values only: parameters enter as plain
    // constants, so no adjoint closures or saved state are kept
    explicit Tape(bool grads_enabled) : grads_enabled_(grads_enabled) {}

    // Non-differentiable input (ground truth, masks, ramps).
    NodeId constant(Tensor v) { return push_node(std::move(v), {}, nullptr, false); }

    // Differentiable leaf that is not a registered parameter (test probes).
    NodeId leaf(Tensor v) { return push_node(std::move(v), {}, nullptr, true); }

    // Registered parameter; memoized so repeated use (weight sharing) maps to
    // one node and gradients from every use accumulate there.
    NodeId param(Parameter& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return it->second;
        NodeId id = push_node(p.value, {}, nullptr, grads_enabled_);
        param_nodes_[&p] = id;
        return id;
    }

    NodeId push(Tensor value, std::vector<NodeId> inputs, BackwardFn fn) {
        bool needs = false;
        for (NodeId in : inputs) needs = needs || node(in).needs_grad;
        return push_node(std::move(value), std::move(inputs), needs ? std::move(fn) : nullptr, needs);
    }

    const Tensor& value(NodeId id) const { return node(id).value; }

    // Gradient buffer for a node, allocated on demand; null for nodes that do
    // not need gradients so adjoints can skip the scatter.
    Tensor* grad_ptr(NodeId id) {
        Node& n = node(id);
        if (!n.needs_grad) return nullptr;
        if (!n.grad.defined()) n.grad = Tensor::zeros(n.value.shape());
        return &n.grad;
    }

    const Tensor& grad(NodeId id) const {
        const Node& n = node(id);
        if (!n.grad.defined())
            throw std::logic_error("gradient not populated; run backward first");
        return n.grad;
    }

    void backward(NodeId loss) {
        if (backward_done_)
            throw std::logic_error("backward already run on this graph; record a new forward pass first");
        const Node& ln = node(loss);
        if (ln.value.size() != 1)
            throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(ln.value.shape()));
        if (!ln.needs_grad)
            throw std::invalid_argument("loss is detached from every differentiable leaf");
        backward_done_ = true;
        *grad_ptr(loss) = Tensor::ones({1});
        for (NodeId id = loss; id >= 0; --id) {
            Node& n = node(id);
            if (n.backward && n.grad.defined()) n.backward(*this);
        }
    }

    bool backward_done() const { return backward_done_; }

    bool uses(const Parameter& p) const { return param_nodes_.count(&p) > 0; }

    // Accumulated gradient for a parameter; zeros if the forward never used it.
    Tensor grad_of(const Parameter& p) const {
        auto it = param_nodes_.find(&p);
        if (it == param_nodes_.end()) return Tensor::zeros(p.value.shape());
        const Node& n = node(it->second);
        return n.grad.defined() ? n.grad : Tensor::zeros(p.value.shape());
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<NodeId> inputs;
        BackwardFn backward;
        bool needs_grad = false;
    };

    Node& node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }

    NodeId push_node(Tensor value, std::vector<NodeId> inputs, BackwardFn fn, bool needs_grad) {
        Node n;
        n.value = std::move(value);
        n.inputs = std::move(inputs);
        n.backward = std::move(fn);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, NodeId> param_nodes_;
    bool grads_enabled_ = true;
    bool backward_done_ = false;
};

}  // namespace stereomamba
