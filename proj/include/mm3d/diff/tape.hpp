// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mm3d/diff/tensor.hpp"

namespace mm3d::diff {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    Tape& tape() const noexcept { return *tape_; }
    std::uint32_t index() const noexcept { return index_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::uint32_t index)
        : tape_(tape),
          index_(index) {}

    Tape* tape_ = nullptr;
    std::uint32_t index_ = 0;
};

/// What a backward function sees. in_grads[i] is null when input i needs no gradient.
struct BackwardContext {
    const Tensor& out_value;
    const Tensor& out_grad;
    std::span<const Tensor* const> in_values;
    std::span<Tensor* const> in_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Records operations in execution order, which is a topological order.
/// Ops whose inputs all lack requires_grad store only their value.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Adds an op result. Throws NumericError if `value` is not finite.
    Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn backward);
    Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
        return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
    }

    /// Reverse sweep from a scalar root. Gradients from an earlier sweep are discarded.
    void backward(Var root);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    /// Gradient from the last backward(); zeros when none reached `v`.
    Tensor grad(Var v) const;

    std::size_t size() const noexcept { return nodes_.size(); }
    /// Nodes carrying a backward function.
    std::size_t recorded_ops() const noexcept;

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        std::vector<std::uint32_t> inputs;
        BackwardFn backward;
    };

    const Node& node(Var v) const;

    std::vector<Node> nodes_;
};

} // namespace mm3d::diff
