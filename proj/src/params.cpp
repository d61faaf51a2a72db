// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/params.hpp"

#include <cmath>

#include "mm3d/diff/ops.hpp"

namespace mm3d {

Linear init_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Linear layer = zero_linear(in, out);
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : layer.weight.values()) {
        w = static_cast<float>(dist(rng));
    }
    return layer;
}

Linear zero_linear(std::size_t in, std::size_t out) {
    return Linear{diff::Tensor({in, out}), diff::Tensor({1, out})};
}

LinearVars bind(diff::Tape& tape, const Linear& layer, bool requires_grad) {
    return LinearVars{tape.leaf(layer.weight, requires_grad), tape.leaf(layer.bias, requires_grad)};
}

diff::Var apply(const LinearVars& layer, diff::Var x) {
    return diff::add_rowwise(diff::matmul(x, layer.weight), layer.bias);
}

} // namespace mm3d
