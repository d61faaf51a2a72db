// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "mm3d/diff/tape.hpp"

namespace mm3d::diff {


Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// a (m x n) + b (1 x n) broadcast over rows. The only broadcasting op.
Var add_rowwise(Var a, Var bias);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Concatenation along columns; all inputs share the row count.
Var concat(std::span<const Var> parts);
inline Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }
Var relu(Var a);
/// out.row(r) = a.row(index[r]).
Var gather(Var a, std::vector<std::uint32_t> index);
/// Column-wise max over row segments [offsets[g], offsets[g+1]). Gradient goes
/// to the first maximal row of each segment.
Var max_over_segments(Var a, std::vector<std::size_t> offsets);
/// Segments of `group` consecutive rows.
Var max_over_group(Var a, std::size_t group);
/// Sum of all entries, as a {1,1} tensor.
Var sum(Var a);
/// Row-wise log(sum(exp)), shape (m x 1).
Var logsumexp(Var a);
Var transpose(Var a);
/// Each row divided by max(||row||, 1e-12).
Var normalize_rows(Var a);


} // namespace mm3d::diff
