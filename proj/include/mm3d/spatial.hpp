// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mm3d/scene.hpp"

namespace mm3d::spatial {

/// Squared Euclidean distance, evaluated as (dx*dx + dy*dy) + dz*dz in float.
/// Every exact search in the library ranks candidates with this expression.
inline float squared_distance(const Vec3& a, const Vec3& b) noexcept {
    const float dx = a[0] - b[0];
    const float dy = a[1] - b[1];
    const float dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

struct Neighbor {
    float d2 = std::numeric_limits<float>::infinity();
    std::uint32_t key = 0; // tie-break key (point id or row)
    std::uint32_t row = 0;

    friend bool operator<(const Neighbor& a, const Neighbor& b) noexcept {
        return a.d2 < b.d2 || (a.d2 == b.d2 && a.key < b.key);
    }
};

/// Uniform-grid index over a fixed point set. Queries are exact: they return
/// the same neighbors, in the same (distance, key) order, as a full scan.
class PointGrid {
public:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    /// `keys` break distance ties (ascending); when empty, the row index is used.
    PointGrid(std::span<const Vec3> points, std::span<const std::uint32_t> keys = {});

    std::size_t size() const noexcept { return points_.size(); }

    /// The k nearest points to q, excluding row `skip`, sorted ascending.
    /// Returns fewer than k when the set is smaller.
    void knn(const Vec3& q, std::size_t k, std::size_t skip, std::vector<Neighbor>& out) const;

    /// Nearest point to q. Requires a non-empty set.
    Neighbor nearest(const Vec3& q) const;

private:
    std::uint32_t key(std::size_t row) const noexcept {
        return keys_.empty() ? static_cast<std::uint32_t>(row) : keys_[row];
    }

    template <class Visit>
    void search(const Vec3& q, Visit&& visit) const;

    std::span<const Vec3> points_;
    std::span<const std::uint32_t> keys_;
    std::array<double, 3> origin_{};
    double cell_ = 1.0;
    std::array<std::int64_t, 3> dims_{1, 1, 1};
    std::vector<std::uint32_t> cell_start_;
    std::vector<std::uint32_t> sorted_rows_;
};

/// k nearest neighbors (self excluded) of each query row within `points`,
/// ties by ascending key. Result is row-major, queries.size() x min(k, N-1).
std::vector<std::uint32_t> knn_rows(std::span<const Vec3> points, std::span<const std::uint32_t> keys,
                                    std::span<const std::uint32_t> queries, std::size_t k);

} // namespace mm3d::spatial
