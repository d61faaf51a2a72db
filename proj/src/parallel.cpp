// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace mm3d {

std::size_t thread_budget() {
    if (const char* env = std::getenv("MM3D_THREADS")) {
        try {
            const long value = std::stol(env);
            if (value >= 1) {
                return static_cast<std::size_t>(value);
            }
        } catch (const std::exception&) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk) {
    if (n == 0) {
        return;
    }
    const std::size_t workers = std::min(thread_budget(), (n + min_chunk - 1) / min_chunk);
    if (workers <= 1) {
        body(0, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::exception_ptr> errors(workers);
    auto run = [&](std::size_t w) {
        try {
            body(w * chunk, std::min(n, (w + 1) * chunk));
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    for (std::size_t w = 1; w < workers && w * chunk < n; ++w) {
        threads.emplace_back(run, w);
    }
    run(0);
    for (auto& t : threads) {
        t.join();
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace mm3d
