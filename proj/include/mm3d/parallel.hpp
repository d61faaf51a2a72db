// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace mm3d {

/// Worker count: MM3D_THREADS when set (>= 1), otherwise hardware concurrency.
std::size_t thread_budget();

/// Runs body(begin, end) over contiguous chunks of [0, n). Each index is
/// visited exactly once; chunk boundaries depend only on n and the thread
/// budget, so per-index results are independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 256);

} // namespace mm3d
