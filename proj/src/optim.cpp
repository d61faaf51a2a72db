// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mm3d/error.hpp"

namespace mm3d {

AdamState zero_moments(std::span<const ConstParamRef> params) {
    AdamState state;
    for (const auto& p : params) {
        state.m.emplace_back(p.tensor->shape());
        state.v.emplace_back(p.tensor->shape());
    }
    return state;
}

void adamw_step(std::span<const ParamRef> params, std::span<const diff::Tensor> grads, AdamState& state, double lr,
                double weight_decay, const AdamOptions& opt) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
        throw ContractError(fmt::format("adamw_step: {} params, {} grads, {} moments", params.size(), grads.size(),
                                        state.m.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& shape = params[i].tensor->shape();
        if (grads[i].shape() != shape || state.m[i].shape() != shape || state.v[i].shape() != shape) {
            throw ContractError(fmt::format("adamw_step: shape mismatch at {}", params[i].name));
        }
        if (!grads[i].all_finite()) {
            throw NumericError(fmt::format("non-finite gradient in {} at optimizer step {}", params[i].name,
                                           state.step + 1));
        }
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    const double decay = 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].tensor->values();
        auto m = state.m[i].values();
        auto v = state.v[i].values();
        const auto g = grads[i].values();
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            const double mj = opt.beta1 * m[j] + (1.0 - opt.beta1) * gj;
            const double vj = opt.beta2 * v[j] + (1.0 - opt.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + opt.eps);
            p[j] = static_cast<float>(p[j] * decay - update);
        }
    }
}

} // namespace mm3d
