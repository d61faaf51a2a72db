// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/diff/tape.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mm3d/error.hpp"

namespace mm3d::diff {

const Tensor& Var::value() const {
    if (!tape_) {
        throw ContractError("use of an unbound Var");
    }
    return tape_->value(*this);
}

bool Var::requires_grad() const {
    return tape_ && tape_->requires_grad(*this);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    if (value.empty()) {
        throw ShapeError("leaf tensor is empty");
    }
    if (!value.all_finite()) {
        throw NumericError("leaf tensor holds a non-finite value");
    }
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    if (!value.all_finite()) {
        throw NumericError(fmt::format("{} produced a non-finite value", op));
    }
    Node node;
    node.value = std::move(value);
    for (const Var& v : inputs) {
        if (&v.tape() != this) {
            throw ContractError(fmt::format("{}: input belongs to another tape", op));
        }
        node.requires_grad = node.requires_grad || nodes_[v.index()].requires_grad;
    }
    if (node.requires_grad) {
        node.inputs.reserve(inputs.size());
        for (const Var& v : inputs) {
            node.inputs.push_back(v.index());
        }
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tape::Node& Tape::node(Var v) const {
    if (&v.tape() != this || v.index() >= nodes_.size()) {
        throw ContractError("Var does not belong to this tape");
    }
    return nodes_[v.index()];
}

const Tensor& Tape::value(Var v) const {
    return node(v).value;
}

bool Tape::requires_grad(Var v) const {
    return node(v).requires_grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = node(v);
    return n.has_grad ? n.grad : Tensor(n.value.shape());
}

std::size_t Tape::recorded_ops() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return static_cast<bool>(n.backward); }));
}

void Tape::backward(Var root) {
    const Node& r = node(root);
    if (r.value.size() != 1) {
        throw ContractError(fmt::format("backward needs a scalar root, got shape {}", shape_string(r.value.shape())));
    }
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    Node& root_node = nodes_[root.index()];
    if (!root_node.requires_grad) {
        return;
    }
    root_node.grad = Tensor::scalar(1.0f);
    root_node.has_grad = true;

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    for (std::size_t i = root.index() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.backward) {
            continue;
        }
        in_values.clear();
        in_grads.clear();
        for (std::uint32_t j : n.inputs) {
            Node& in = nodes_[j];
            in_values.push_back(&in.value);
            if (in.requires_grad) {
                if (!in.has_grad) {
                    in.grad = Tensor(in.value.shape());
                    in.has_grad = true;
                }
                in_grads.push_back(&in.grad);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        n.backward(BackwardContext{n.value, n.grad, in_values, in_grads});
    }
}

} // namespace mm3d::diff
