// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/diff/ops.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mm3d/error.hpp"

namespace mm3d::diff {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(fmt::format("{}: incompatible shapes {} and {}", op, shape_string(a.shape()),
                                 shape_string(b.shape())));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        shape_mismatch(op, a, b);
    }
}

} // namespace

Var matmul(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.cols() != B.rows()) {
        shape_mismatch("matmul", A, B);
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C({m, n});
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A(i, p);
            if (av == 0.0) {
                continue;
            }
            const double* brow = B.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                acc[j] += av * brow[j];
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            C(i, j) = acc[j];
        }
    }
    return a.tape().record("matmul", std::move(C), {a, b}, [m, k, n](const BackwardContext& ctx) {
        const Tensor& A = *ctx.in_values[0];
        const Tensor& B = *ctx.in_values[1];
        const Tensor& G = ctx.out_grad;
        if (Tensor* gA = ctx.in_grads[0]) {
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = G.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = B.data() + p * n;
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        s += grow[j] * brow[j];
                    }
                    (*gA)(i, p) += s;
                }
            }
        }
        if (Tensor* gB = ctx.in_grads[1]) {
            // dB = A^T * G
            std::vector<double> acc(k * n, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = G.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A(i, p);
                    if (av == 0.0) {
                        continue;
                    }
                    double* arow = acc.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        arow[j] += av * grow[j];
                    }
                }
            }
            double* g = gB->data();
            for (std::size_t x = 0; x < k * n; ++x) {
                g[x] += acc[x];
            }
        }
    });
}

Var add(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_same_shape("add", A, B);
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) {
        C.data()[i] += B.data()[i];
    }
    return a.tape().record("add", std::move(C), {a, b}, [](const BackwardContext& ctx) {
        for (Tensor* g : ctx.in_grads) {
            if (g) {
                g->accumulate(ctx.out_grad);
            }
        }
    });
}

Var add_rowwise(Var a, Var bias) {
    const Tensor& A = a.value();
    const Tensor& b = bias.value();
    if (b.rows() != 1 || b.cols() != A.cols()) {
        shape_mismatch("add_rowwise", A, b);
    }
    Tensor C = A;
    const std::size_t n = A.cols();
    for (std::size_t i = 0; i < A.rows(); ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            C(i, j) += b.data()[j];
        }
    }
    return a.tape().record("add_rowwise", std::move(C), {a, bias}, [n](const BackwardContext& ctx) {
        const Tensor& G = ctx.out_grad;
        if (Tensor* ga = ctx.in_grads[0]) {
            ga->accumulate(G);
        }
        if (Tensor* gb = ctx.in_grads[1]) {
            std::vector<double> acc(n, 0.0);
            for (std::size_t i = 0; i < G.rows(); ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    acc[j] += G(i, j);
                }
            }
            for (std::size_t j = 0; j < n; ++j) {
                gb->data()[j] += acc[j];
            }
        }
    });
}

Var sub(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_same_shape("sub", A, B);
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) {
        C.data()[i] -= B.data()[i];
    }
    return a.tape().record("sub", std::move(C), {a, b}, [](const BackwardContext& ctx) {
        if (Tensor* ga = ctx.in_grads[0]) {
            ga->accumulate(ctx.out_grad);
        }
        if (Tensor* gb = ctx.in_grads[1]) {
            for (std::size_t i = 0; i < gb->size(); ++i) {
                gb->data()[i] -= ctx.out_grad.data()[i];
            }
        }
    });
}

Var mul(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_same_shape("mul", A, B);
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) {
        C.data()[i] *= B.data()[i];
    }
    return a.tape().record("mul", std::move(C), {a, b}, [](const BackwardContext& ctx) {
        const Tensor& G = ctx.out_grad;
        for (int side = 0; side < 2; ++side) {
            if (Tensor* g = ctx.in_grads[side]) {
                const Tensor& other = *ctx.in_values[1 - side];
                for (std::size_t i = 0; i < g->size(); ++i) {
                    g->data()[i] += G.data()[i] * other.data()[i];
                }
            }
        }
    });
}

Var scale(Var a, double factor) {
    Tensor C = a.value();
    for (double& v : C.values()) {
        v *= factor;
    }
    return a.tape().record("scale", std::move(C), {a}, [factor](const BackwardContext& ctx) {
        if (Tensor* g = ctx.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                g->data()[i] += ctx.out_grad.data()[i] * factor;
            }
        }
    });
}

Var concat(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat of zero tensors");
    }
    const std::size_t m = parts[0].rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.rows() != m) {
            shape_mismatch("concat", parts[0].value(), p.value());
        }
        widths.push_back(p.cols());
        total += p.cols();
    }
    Tensor C({m, total});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const Tensor& P = p.value();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy(P.row(i).begin(), P.row(i).end(), C.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
        }
        offset += P.cols();
    }
    return parts[0].tape().record("concat", std::move(C), parts, [widths, m](const BackwardContext& ctx) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (Tensor* g = ctx.in_grads[k]) {
                for (std::size_t i = 0; i < m; ++i) {
                    const auto src = ctx.out_grad.row(i);
                    auto dst = g->row(i);
                    for (std::size_t j = 0; j < widths[k]; ++j) {
                        dst[j] += src[offset + j];
                    }
                }
            }
            offset += widths[k];
        }
    });
}

Var relu(Var a) {
    Tensor C = a.value();
    for (double& v : C.values()) {
        v = v > 0.0 ? v : 0.0;
    }
    return a.tape().record("relu", std::move(C), {a}, [](const BackwardContext& ctx) {
        if (Tensor* g = ctx.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                if (ctx.out_value.data()[i] > 0.0) {
                    g->data()[i] += ctx.out_grad.data()[i];
                }
            }
        }
    });
}

Var gather(Var a, std::vector<std::uint32_t> index) {
    const Tensor& A = a.value();
    if (index.empty()) {
        throw ShapeError("gather with an empty index");
    }
    const std::size_t n = A.cols();
    Tensor C({index.size(), n});
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= A.rows()) {
            throw ShapeError(fmt::format("gather: row {} outside {}", index[r], shape_string(A.shape())));
        }
        std::copy(A.row(index[r]).begin(), A.row(index[r]).end(), C.row(r).begin());
    }
    return a.tape().record("gather", std::move(C), {a}, [index = std::move(index), n](const BackwardContext& ctx) {
        if (Tensor* g = ctx.in_grads[0]) {
            for (std::size_t r = 0; r < index.size(); ++r) {
                const auto src = ctx.out_grad.row(r);
                auto dst = g->row(index[r]);
                for (std::size_t j = 0; j < n; ++j) {
                    dst[j] += src[j];
                }
            }
        }
    });
}

Var max_over_segments(Var a, std::vector<std::size_t> offsets) {
    const Tensor& A = a.value();
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != A.rows()) {
        throw ShapeError(fmt::format("max_over_segments: offsets do not partition {} rows", A.rows()));
    }
    const std::size_t groups = offsets.size() - 1;
    const std::size_t n = A.cols();
    Tensor C({groups, n});
    std::vector<std::uint32_t> argmax(groups * n);
    for (std::size_t g = 0; g < groups; ++g) {
        if (offsets[g + 1] <= offsets[g]) {
            throw ShapeError("max_over_segments: empty segment");
        }
        for (std::size_t j = 0; j < n; ++j) {
            std::size_t best = offsets[g];
            for (std::size_t r = offsets[g] + 1; r < offsets[g + 1]; ++r) {
                if (A(r, j) > A(best, j)) {
                    best = r;
                }
            }
            C(g, j) = A(best, j);
            argmax[g * n + j] = static_cast<std::uint32_t>(best);
        }
    }
    return a.tape().record("max_over_segments", std::move(C), {a},
                           [argmax = std::move(argmax), n](const BackwardContext& ctx) {
                               if (Tensor* g = ctx.in_grads[0]) {
                                   for (std::size_t x = 0; x < argmax.size(); ++x) {
                                       (*g)(argmax[x], x % n) += ctx.out_grad.data()[x];
                                   }
                               }
                           });
}

Var max_over_group(Var a, std::size_t group) {
    if (group == 0 || a.rows() % group != 0) {
        throw ShapeError(fmt::format("max_over_group: {} rows are not a multiple of {}", a.rows(), group));
    }
    std::vector<std::size_t> offsets(a.rows() / group + 1);
    for (std::size_t g = 0; g < offsets.size(); ++g) {
        offsets[g] = g * group;
    }
    return max_over_segments(a, std::move(offsets));
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) {
        s += v;
    }
    return a.tape().record("sum", Tensor::scalar(s), {a}, [](const BackwardContext& ctx) {
        if (Tensor* g = ctx.in_grads[0]) {
            const double go = ctx.out_grad.item();
            for (double& v : g->values()) {
                v += go;
            }
        }
    });
}

Var logsumexp(Var a) {
    const Tensor& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    Tensor C({m, 1});
    for (std::size_t i = 0; i < m; ++i) {
        const auto row = A.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) {
            s += std::exp(v - mx);
        }
        C(i, 0) = mx + std::log(s);
    }
    return a.tape().record("logsumexp", std::move(C), {a}, [m, n](const BackwardContext& ctx) {
        if (Tensor* g = ctx.in_grads[0]) {
            const Tensor& A = *ctx.in_values[0];
            for (std::size_t i = 0; i < m; ++i) {
                const auto row = A.row(i);
                const double mx = *std::max_element(row.begin(), row.end());
                double s = 0.0;
                for (double v : row) {
                    s += std::exp(v - mx);
                }
                const double go = ctx.out_grad(i, 0);
                for (std::size_t j = 0; j < n; ++j) {
                    (*g)(i, j) += go * std::exp(row[j] - mx) / s;
                }
            }
        }
    });
}

Var transpose(Var a) {
    const Tensor& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    Tensor C({n, m});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            C(j, i) = A(i, j);
        }
    }
    return a.tape().record("transpose", std::move(C), {a}, [m, n](const BackwardContext& ctx) {
        if (Tensor* g = ctx.in_grads[0]) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    (*g)(i, j) += ctx.out_grad(j, i);
                }
            }
        }
    });
}

namespace {

constexpr double kNormFloor = 1e-12;

double row_norm(std::span<const double> row) {
    double s = 0.0;
    for (double v : row) {
        s += v * v;
    }
    return std::sqrt(s);
}

} // namespace

Var normalize_rows(Var a) {
    const Tensor& A = a.value();
    Tensor C = A;
    for (std::size_t i = 0; i < A.rows(); ++i) {
        const double norm = std::max(row_norm(A.row(i)), kNormFloor);
        for (double& v : C.row(i)) {
            v /= norm;
        }
    }
    return a.tape().record("normalize_rows", std::move(C), {a}, [](const BackwardContext& ctx) {
        Tensor* g = ctx.in_grads[0];
        if (!g) {
            return;
        }
        const Tensor& A = *ctx.in_values[0];
        for (std::size_t i = 0; i < A.rows(); ++i) {
            const double raw = row_norm(A.row(i));
            const auto go = ctx.out_grad.row(i);
            auto gi = g->row(i);
            if (raw < kNormFloor) {
                // Constant-floor branch: y = x / floor.
                for (std::size_t j = 0; j < gi.size(); ++j) {
                    gi[j] += go[j] / kNormFloor;
                }
                continue;
            }
            // dx = (g - y (y . g)) / ||x||
            double dot = 0.0;
            for (std::size_t j = 0; j < gi.size(); ++j) {
                dot += (A(i, j) / raw) * go[j];
            }
            for (std::size_t j = 0; j < gi.size(); ++j) {
                gi[j] += (go[j] - (A(i, j) / raw) * dot) / raw;
            }
        }
    });
}

} // namespace mm3d::diff
