// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "mm3d/diff/tape.hpp"

namespace mm3d {

/// Fully connected layer: y = x W + b, W is (in x out), b is (1 x out).
struct Linear {
    diff::Tensor weight;
    diff::Tensor bias;
};

struct LinearVars {
    diff::Var weight;
    diff::Var bias;
};

/// He-uniform weights, zero bias.
Linear init_linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
Linear zero_linear(std::size_t in, std::size_t out);
LinearVars bind(diff::Tape& tape, const Linear& layer, bool requires_grad);
diff::Var apply(const LinearVars& layer, diff::Var x);

/// Flat, ordered view over the tensors of a parameter struct. The order is
/// the checkpoint and optimizer order.
struct ParamRef {
    std::string name;
    diff::Tensor* tensor;
};

struct ConstParamRef {
    std::string name;
    const diff::Tensor* tensor;
};

} // namespace mm3d
