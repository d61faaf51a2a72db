// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mm3d {

struct GradcheckEntry {
    std::string name;
    std::uint64_t seed = 0;
    double error = 0.0;
};

enum class PipelineLoss { reconstruction, consistency };

const char* to_string(PipelineLoss loss) noexcept;

/// Small network used for finite-difference checks of the full pipeline.
struct PipelineCheckOptions {
    std::size_t points = 32;
    double eps = 1e-6;
};

/// Every differentiable primitive, plus chamfer and info-NCE, on random
/// inputs kept away from non-differentiable points.
std::vector<GradcheckEntry> primitive_gradchecks(std::uint64_t seed, double eps = 1e-6);

/// encode -> decode -> L_PC, or encode -> L_CSD against a teacher copy,
/// checked over every parameter. Biases are drawn nonzero so no ReLU input
/// sits exactly on its kink.
GradcheckEntry pipeline_gradcheck(PipelineLoss loss, std::uint64_t seed, const PipelineCheckOptions& opt = {});

/// primitive_gradchecks and both pipeline checks for every seed.
std::vector<GradcheckEntry> gradcheck_suite(const std::vector<std::uint64_t>& seeds,
                                            const PipelineCheckOptions& opt = {});

} // namespace mm3d
