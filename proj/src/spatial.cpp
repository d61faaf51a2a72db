// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/spatial.hpp"

#include <algorithm>
#include <cmath>

#include "mm3d/error.hpp"
#include "mm3d/parallel.hpp"

namespace mm3d::spatial {

namespace {

// Average occupancy targeted per non-empty cell.
constexpr double kTargetPerCell = 6.0;
constexpr std::int64_t kMaxCellsPerPoint = 8;

} // namespace

PointGrid::PointGrid(std::span<const Vec3> points, std::span<const std::uint32_t> keys)
    : points_(points),
      keys_(keys) {
    if (!keys_.empty() && keys_.size() != points_.size()) {
        throw ContractError("PointGrid: keys and points differ in length");
    }
    const std::size_t n = points_.size();
    if (n == 0) {
        cell_start_.assign(2, 0);
        return;
    }

    std::array<double, 3> lo{points_[0][0], points_[0][1], points_[0][2]};
    std::array<double, 3> hi = lo;
    for (const Vec3& p : points_) {
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min<double>(lo[a], p[a]);
            hi[a] = std::max<double>(hi[a], p[a]);
        }
    }
    const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
    origin_ = lo;
    cell_ = extent > 0.0 ? extent / std::max(1.0, std::cbrt(static_cast<double>(n))) : 1.0;

    auto cell_of = [&](const Vec3& p, const std::array<std::int64_t, 3>& dims) {
        std::int64_t idx = 0;
        for (int a = 0; a < 3; ++a) {
            auto c = static_cast<std::int64_t>(std::floor((p[a] - origin_[a]) / cell_));
            c = std::clamp<std::int64_t>(c, 0, dims[a] - 1);
            idx = idx * dims[a] + c;
        }
        return idx;
    };

    // Refine the cell size until occupied cells hold few points. Surface data
    // leaves most volume cells empty, so occupancy is measured, not assumed.
    std::vector<std::int64_t> cell_index(n);
    for (int iter = 0;; ++iter) {
        std::int64_t total = 1;
        for (int a = 0; a < 3; ++a) {
            dims_[a] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor((hi[a] - lo[a]) / cell_)) + 1);
            total *= dims_[a];
        }
        for (std::size_t i = 0; i < n; ++i) {
            cell_index[i] = cell_of(points_[i], dims_);
        }
        std::vector<std::int64_t> sorted(cell_index);
        std::sort(sorted.begin(), sorted.end());
        const auto occupied = static_cast<double>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
        const double per_cell = static_cast<double>(n) / occupied;
        if (per_cell <= kTargetPerCell || iter >= 6 || extent == 0.0 ||
            total * 8 > kMaxCellsPerPoint * static_cast<std::int64_t>(n) + 64) {
            break;
        }
        cell_ *= 0.5;
    }

    std::int64_t total = dims_[0] * dims_[1] * dims_[2];
    cell_start_.assign(static_cast<std::size_t>(total) + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ++cell_start_[static_cast<std::size_t>(cell_index[i]) + 1];
    }
    for (std::size_t c = 1; c < cell_start_.size(); ++c) {
        cell_start_[c] += cell_start_[c - 1];
    }
    sorted_rows_.resize(n);
    std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t i = 0; i < n; ++i) {
        sorted_rows_[fill[static_cast<std::size_t>(cell_index[i])]++] = static_cast<std::uint32_t>(i);
    }
}

// Visits cells in rings of growing Chebyshev radius around the query's cell.
// visit(row) is called per candidate; after each ring, visit.done(bound2) is
// asked whether any unvisited point (squared distance >= bound2) could matter.
template <class Visit>
void PointGrid::search(const Vec3& q, Visit&& visit) const {
    std::array<std::int64_t, 3> c{};
    std::int64_t r_start = 0;
    std::int64_t r_max = 0;
    for (int a = 0; a < 3; ++a) {
        c[a] = static_cast<std::int64_t>(std::floor((q[a] - origin_[a]) / cell_));
        if (c[a] < 0) {
            r_start = std::max(r_start, -c[a]);
        } else if (c[a] >= dims_[a]) {
            r_start = std::max(r_start, c[a] - dims_[a] + 1);
        }
        r_max = std::max({r_max, std::abs(c[a]), std::abs(dims_[a] - 1 - c[a])});
    }

    auto visit_cell = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        const auto cell = static_cast<std::size_t>((x * dims_[1] + y) * dims_[2] + z);
        for (std::uint32_t k = cell_start_[cell]; k < cell_start_[cell + 1]; ++k) {
            visit(sorted_rows_[k]);
        }
    };

    for (std::int64_t r = r_start; r <= r_max; ++r) {
        const std::int64_t x0 = std::max<std::int64_t>(0, c[0] - r), x1 = std::min(dims_[0] - 1, c[0] + r);
        const std::int64_t y0 = std::max<std::int64_t>(0, c[1] - r), y1 = std::min(dims_[1] - 1, c[1] + r);
        const std::int64_t z0 = std::max<std::int64_t>(0, c[2] - r), z1 = std::min(dims_[2] - 1, c[2] + r);
        for (std::int64_t x = x0; x <= x1; ++x) {
            const bool x_on_shell = std::abs(x - c[0]) == r;
            for (std::int64_t y = y0; y <= y1; ++y) {
                if (x_on_shell || std::abs(y - c[1]) == r) {
                    for (std::int64_t z = z0; z <= z1; ++z) {
                        visit_cell(x, y, z);
                    }
                } else {
                    if (c[2] - r >= 0 && c[2] - r < dims_[2]) {
                        visit_cell(x, y, c[2] - r);
                    }
                    if (r > 0 && c[2] + r >= 0 && c[2] + r < dims_[2]) {
                        visit_cell(x, y, c[2] + r);
                    }
                }
            }
        }
        // Cells outside this ring are at least r cells away from q's cell.
        const double bound = static_cast<double>(r) * cell_;
        if (visit.done(bound * bound * (1.0 - 1e-5))) {
            return;
        }
    }
}

void PointGrid::knn(const Vec3& q, std::size_t k, std::size_t skip, std::vector<Neighbor>& out) const {
    out.clear();
    if (k == 0 || points_.empty()) {
        return;
    }
    const std::size_t available = points_.size() - (skip < points_.size() ? 1 : 0);
    k = std::min(k, available);
    if (k == 0) {
        return;
    }

    struct Collector {
        const PointGrid& grid;
        const Vec3& q;
        std::size_t k;
        std::size_t skip;
        std::vector<Neighbor>& heap; // max-heap on (d2, key)

        void operator()(std::uint32_t row) {
            if (row == skip) {
                return;
            }
            const Neighbor cand{squared_distance(q, grid.points_[row]), grid.key(row), row};
            if (heap.size() < k) {
                heap.push_back(cand);
                std::push_heap(heap.begin(), heap.end());
            } else if (cand < heap.front()) {
                std::pop_heap(heap.begin(), heap.end());
                heap.back() = cand;
                std::push_heap(heap.begin(), heap.end());
            }
        }
        bool done(double bound2) const { return heap.size() == k && static_cast<double>(heap.front().d2) < bound2; }
    };

    search(q, Collector{*this, q, k, skip, out});
    std::sort_heap(out.begin(), out.end());
}

Neighbor PointGrid::nearest(const Vec3& q) const {
    if (points_.empty()) {
        throw ContractError("nearest() on an empty point set");
    }
    struct Best {
        const PointGrid& grid;
        const Vec3& q;
        Neighbor best;
        bool found = false;

        void operator()(std::uint32_t row) {
            const Neighbor cand{squared_distance(q, grid.points_[row]), grid.key(row), row};
            if (!found || cand < best) {
                best = cand;
                found = true;
            }
        }
        bool done(double bound2) const { return found && static_cast<double>(best.d2) < bound2; }
    };
    Best best{*this, q, Neighbor{}};
    search(q, best);
    return best.best;
}

std::vector<std::uint32_t> knn_rows(std::span<const Vec3> points, std::span<const std::uint32_t> keys,
                                    std::span<const std::uint32_t> queries, std::size_t k) {
    const std::size_t n = points.size();
    const std::size_t k_eff = n == 0 ? 0 : std::min(k, n - 1);
    std::vector<std::uint32_t> result(queries.size() * k_eff);
    if (k_eff == 0) {
        return result;
    }
    const PointGrid grid(points, keys);
    parallel_for(queries.size(), [&](std::size_t begin, std::size_t end) {
        std::vector<Neighbor> found;
        found.reserve(k_eff);
        for (std::size_t i = begin; i < end; ++i) {
            const std::uint32_t row = queries[i];
            grid.knn(points[row], k_eff, row, found);
            for (std::size_t j = 0; j < k_eff; ++j) {
                result[i * k_eff + j] = found[j].row;
            }
        }
    });
    return result;
}

} // namespace mm3d::spatial
