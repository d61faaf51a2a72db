// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/diff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mm3d/error.hpp"

namespace mm3d::diff {

namespace {

double evaluate(const ScalarFn& f, std::span<const Tensor> inputs) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        leaves.push_back(tape.leaf(t, false));
    }
    return f(leaves).value().item();
}

} // namespace

GradcheckReport gradcheck(const ScalarFn& f, std::span<const Tensor> inputs, double eps) {
    if (!(eps > 0.0)) {
        throw ContractError("gradcheck needs eps > 0");
    }
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> leaves;
        for (const Tensor& t : inputs) {
            leaves.push_back(tape.leaf(t, true));
        }
        const Var root = f(leaves);
        tape.backward(root);
        for (const Var& leaf : leaves) {
            analytic.push_back(tape.grad(leaf));
        }
    }

    GradcheckReport report;
    std::vector<Tensor> probe(inputs.begin(), inputs.end());
    for (std::size_t k = 0; k < probe.size(); ++k) {
        for (std::size_t i = 0; i < probe[k].size(); ++i) {
            const double original = probe[k].data()[i];
            const double up = original + eps;
            const double down = original - eps;
            probe[k].data()[i] = up;
            const double plus = evaluate(f, probe);
            probe[k].data()[i] = down;
            const double minus = evaluate(f, probe);
            probe[k].data()[i] = original;

            const double numeric = (plus - minus) / (up - down);
            const double a = analytic[k].data()[i];
            const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            ++report.coordinates;
            if (err > report.max_rel_error || report.coordinates == 1) {
                report.max_rel_error = err;
                report.worst_input = k;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

double gradcheck(const std::function<Var(Var)>& f, const Tensor& x, double eps) {
    const Tensor inputs[] = {x};
    return gradcheck([&](std::span<const Var> leaves) { return f(leaves[0]); }, inputs, eps).max_rel_error;
}

} // namespace mm3d::diff
