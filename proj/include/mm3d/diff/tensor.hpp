// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

namespace mm3d::diff {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major matrix of doubles. Shapes are {rows, cols}, both positive;
/// a scalar is {1, 1}.
class Tensor {
public:
    Tensor() = default;
    /// Zero-filled.
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor scalar(double value) { return Tensor({1, 1}, {value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_[1]; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * shape_[1] + c]; }
    std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * shape_[1], shape_[1]}; }
    std::span<const double> row(std::size_t r) const noexcept { return {values_.data() + r * shape_[1], shape_[1]}; }

    /// Value of a {1,1} tensor.
    double item() const;
    bool all_finite() const noexcept;

    /// this += other, elementwise; shapes must match.
    void accumulate(const Tensor& other);

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

} // namespace mm3d::diff
