// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mm3d/diff/tape.hpp"

namespace mm3d::diff {

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
};

/// Builds a scalar on the tape of the given leaves.
using ScalarFn = std::function<Var(std::span<const Var>)>;

/// Central-difference check of every coordinate of every input:
/// max |a - n| / max(1e-8, |a| + |n|).
GradcheckReport gradcheck(const ScalarFn& f, std::span<const Tensor> inputs, double eps);

double gradcheck(const std::function<Var(Var)>& f, const Tensor& x, double eps);

} // namespace mm3d::diff
