// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/diff/tensor.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mm3d/error.hpp"

namespace mm3d::diff {

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "x" : "") + std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

std::size_t checked_size(const Shape& shape) {
    if (shape.size() != 2 || shape[0] == 0 || shape[1] == 0) {
        throw ShapeError(fmt::format("tensor shape {} is not {{rows, cols}} with positive entries",
                                     shape_string(shape)));
    }
    return shape[0] * shape[1];
}

} // namespace

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      values_(checked_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)),
      values_(std::move(values)) {
    if (checked_size(shape_) != values_.size()) {
        throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_string(shape_),
                                     shape_[0] * shape_[1], values_.size()));
    }
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw ShapeError(fmt::format("item() on a tensor of shape {}", shape_string(shape_)));
    }
    return values_[0];
}

bool Tensor::all_finite() const noexcept {
    for (double v : values_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

void Tensor::accumulate(const Tensor& other) {
    if (other.shape_ != shape_) {
        throw ShapeError(fmt::format("accumulate: {} vs {}", shape_string(shape_), shape_string(other.shape_)));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        values_[i] += other.values_[i];
    }
}

} // namespace mm3d::diff
