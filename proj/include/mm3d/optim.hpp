// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mm3d/params.hpp"

namespace mm3d {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moments, one tensor per parameter in optimizer order.
struct AdamState {
    std::vector<diff::Tensor> m;
    std::vector<diff::Tensor> v;
    std::uint64_t step = 0;
};

AdamState zero_moments(std::span<const ConstParamRef> params);

/// One AdamW update. Decay is decoupled: p <- p - lr*wd*p, then the
/// bias-corrected Adam step. Throws NumericError naming the first parameter
/// with a non-finite gradient; nothing is modified in that case.
void adamw_step(std::span<const ParamRef> params, std::span<const diff::Tensor> grads, AdamState& state, double lr,
                double weight_decay, const AdamOptions& opt = {});

} // namespace mm3d
