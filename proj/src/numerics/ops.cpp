#include "ctxducer/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctxducer/errors.hpp"

namespace ctxducer {

using detail::make_result;
using detail::Node;

namespace {

// Grad buffer of parent `i`, or nullptr when that parent needs no gradient.
double* parent_grad(Node& out, std::size_t i) {
    Node& p = *out.parents[i];
    if (!p.requires_grad) {
        return nullptr;
    }
    p.ensure_grad();
    return p.grad.data();
}

const double* parent_values(const Node& out, std::size_t i) { return out.parents[i]->values.data(); }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
    }
    return static_cast<std::size_t>(a);
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisView {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) {
        v.outer *= shape[i];
    }
    v.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        v.inner *= shape[i];
    }
    return v;
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    if (b.dim(0) != K) {
        throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
    }
    std::vector<double> c(M * N, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (std::size_t i = 0; i < M; ++i) {
        double* crow = c.data() + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = av[i * K + k];
            const double* brow = bv + k * N;
            for (std::size_t j = 0; j < N; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return make_result("matmul", {M, N}, std::move(c), {&a, &b}, [M, K, N](Node& out) {
        const double* g = out.grad.data();
        const double* A = parent_values(out, 0);
        const double* B = parent_values(out, 1);
        if (double* ga = parent_grad(out, 0)) {
            for (std::size_t i = 0; i < M; ++i) {
                for (std::size_t k = 0; k < K; ++k) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < N; ++j) {
                        s += g[i * N + j] * B[k * N + j];
                    }
                    ga[i * K + k] += s;
                }
            }
        }
        if (double* gb = parent_grad(out, 1)) {
            for (std::size_t i = 0; i < M; ++i) {
                for (std::size_t k = 0; k < K; ++k) {
                    const double aik = A[i * K + k];
                    for (std::size_t j = 0; j < N; ++j) {
                        gb[k * N + j] += aik * g[i * N + j];
                    }
                }
            }
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(0);
    if (b.dim(1) != K) {
        throw DimensionError("matmul_nt: inner extents differ " + shape_str(a.shape()) + " · " +
                             shape_str(b.shape()) + "ᵀ");
    }
    std::vector<double> c(M * N);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                s += av[i * K + k] * bv[j * K + k];
            }
            c[i * N + j] = s;
        }
    }
    return make_result("matmul_nt", {M, N}, std::move(c), {&a, &b}, [M, K, N](Node& out) {
        const double* g = out.grad.data();
        const double* A = parent_values(out, 0);
        const double* B = parent_values(out, 1);
        double* ga = parent_grad(out, 0);
        double* gb = parent_grad(out, 1);
        for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t j = 0; j < N; ++j) {
                const double gij = g[i * N + j];
                if (ga) {
                    for (std::size_t k = 0; k < K; ++k) {
                        ga[i * K + k] += gij * B[j * K + k];
                    }
                }
                if (gb) {
                    for (std::size_t k = 0; k < K; ++k) {
                        gb[j * K + k] += gij * A[i * K + k];
                    }
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t M = a.dim(0), N = a.dim(1);
    std::vector<double> t(M * N);
    const double* av = a.values().data();
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            t[j * M + i] = av[i * N + j];
        }
    }
    return make_result("transpose", {N, M}, std::move(t), {&a}, [M, N](Node& out) {
        if (double* ga = parent_grad(out, 0)) {
            for (std::size_t i = 0; i < M; ++i) {
                for (std::size_t j = 0; j < N; ++j) {
                    ga[i * N + j] += out.grad[j * M + i];
                }
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> c(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i] += bv[i];
    }
    return make_result("add", a.shape(), std::move(c), {&a, &b}, [](Node& out) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (double* g = parent_grad(out, p)) {
                for (std::size_t i = 0; i < out.grad.size(); ++i) {
                    g[i] += out.grad[i];
                }
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> c(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i] -= bv[i];
    }
    return make_result("sub", a.shape(), std::move(c), {&a, &b}, [](Node& out) {
        if (double* g = parent_grad(out, 0)) {
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                g[i] += out.grad[i];
            }
        }
        if (double* g = parent_grad(out, 1)) {
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                g[i] -= out.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> c(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i] *= bv[i];
    }
    return make_result("mul", a.shape(), std::move(c), {&a, &b}, [](Node& out) {
        const double* A = parent_values(out, 0);
        const double* B = parent_values(out, 1);
        if (double* g = parent_grad(out, 0)) {
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                g[i] += out.grad[i] * B[i];
            }
        }
        if (double* g = parent_grad(out, 1)) {
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                g[i] += out.grad[i] * A[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> c(a.values().begin(), a.values().end());
    for (auto& v : c) {
        v *= s;
    }
    return make_result("scale", a.shape(), std::move(c), {&a}, [s](Node& out) {
        if (double* g = parent_grad(out, 0)) {
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                g[i] += out.grad[i] * s;
            }
        }
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    require_rank(a, 2, "add_row");
    const std::size_t M = a.dim(0), N = a.dim(1);
    if (row.numel() != N) {
        throw DimensionError("add_row: row of " + std::to_string(row.numel()) + " for matrix " + shape_str(a.shape()));
    }
    std::vector<double> c(a.values().begin(), a.values().end());
    const auto rv = row.values();
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            c[i * N + j] += rv[j];
        }
    }
    return make_result("add_row", a.shape(), std::move(c), {&a, &row}, [M, N](Node& out) {
        if (double* g = parent_grad(out, 0)) {
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                g[i] += out.grad[i];
            }
        }
        if (double* g = parent_grad(out, 1)) {
            for (std::size_t i = 0; i < M; ++i) {
                for (std::size_t j = 0; j < N; ++j) {
                    g[j] += out.grad[i * N + j];
                }
            }
        }
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> y(x.values().begin(), x.values().end());
    for (auto& v : y) {
        v = v > 0.0 ? v : 0.0;
    }
    return make_result("relu", x.shape(), std::move(y), {&x}, [](Node& out) {
        if (double* g = parent_grad(out, 0)) {
            const double* X = parent_values(out, 0);
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                if (X[i] > 0.0) {
                    g[i] += out.grad[i];
                }
            }
        }
    });
}

Tensor softmax(const Tensor& x, int axis) {
    const auto ax = normalize_axis(axis, x.rank(), "softmax");
    const auto v = axis_view(x.shape(), ax);
    const auto xv = x.values();
    std::vector<double> y(xv.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.n * v.inner + i;
            double m = xv[base];
            for (std::size_t k = 1; k < v.n; ++k) {
                m = std::max(m, xv[base + k * v.inner]);
            }
            double s = 0.0;
            for (std::size_t k = 0; k < v.n; ++k) {
                const double e = std::exp(xv[base + k * v.inner] - m);
                y[base + k * v.inner] = e;
                s += e;
            }
            for (std::size_t k = 0; k < v.n; ++k) {
                y[base + k * v.inner] /= s;
            }
        }
    }
    return make_result("softmax", x.shape(), std::move(y), {&x}, [v](Node& out) {
        double* g = parent_grad(out, 0);
        if (!g) {
            return;
        }
        const auto& Y = out.values;
        const auto& G = out.grad;
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t i = 0; i < v.inner; ++i) {
                const std::size_t base = o * v.n * v.inner + i;
                double dot = 0.0;
                for (std::size_t k = 0; k < v.n; ++k) {
                    dot += G[base + k * v.inner] * Y[base + k * v.inner];
                }
                for (std::size_t k = 0; k < v.n; ++k) {
                    const auto idx = base + k * v.inner;
                    g[idx] += Y[idx] * (G[idx] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& x, int axis) {
    const auto ax = normalize_axis(axis, x.rank(), "log_softmax");
    const auto v = axis_view(x.shape(), ax);
    const auto xv = x.values();
    std::vector<double> y(xv.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.n * v.inner + i;
            double m = xv[base];
            for (std::size_t k = 1; k < v.n; ++k) {
                m = std::max(m, xv[base + k * v.inner]);
            }
            double s = 0.0;
            for (std::size_t k = 0; k < v.n; ++k) {
                s += std::exp(xv[base + k * v.inner] - m);
            }
            const double lse = m + std::log(s);
            for (std::size_t k = 0; k < v.n; ++k) {
                y[base + k * v.inner] = xv[base + k * v.inner] - lse;
            }
        }
    }
    return make_result("log_softmax", x.shape(), std::move(y), {&x}, [v](Node& out) {
        double* g = parent_grad(out, 0);
        if (!g) {
            return;
        }
        const auto& Y = out.values;
        const auto& G = out.grad;
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t i = 0; i < v.inner; ++i) {
                const std::size_t base = o * v.n * v.inner + i;
                double gs = 0.0;
                for (std::size_t k = 0; k < v.n; ++k) {
                    gs += G[base + k * v.inner];
                }
                for (std::size_t k = 0; k < v.n; ++k) {
                    const auto idx = base + k * v.inner;
                    g[idx] += G[idx] - std::exp(Y[idx]) * gs;
                }
            }
        }
    });
}

Tensor logsumexp(const Tensor& x, int axis) {
    const auto ax = normalize_axis(axis, x.rank(), "logsumexp");
    const auto v = axis_view(x.shape(), ax);
    Shape out_shape;
    for (std::size_t i = 0; i < x.rank(); ++i) {
        if (i != ax) {
            out_shape.push_back(x.shape()[i]);
        }
    }
    if (out_shape.empty()) {
        out_shape.push_back(1);
    }
    const auto xv = x.values();
    std::vector<double> y(v.outer * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.n * v.inner + i;
            double m = xv[base];
            for (std::size_t k = 1; k < v.n; ++k) {
                m = std::max(m, xv[base + k * v.inner]);
            }
            double s = 0.0;
            for (std::size_t k = 0; k < v.n; ++k) {
                s += std::exp(xv[base + k * v.inner] - m);
            }
            y[o * v.inner + i] = m + std::log(s);
        }
    }
    return make_result("logsumexp", std::move(out_shape), std::move(y), {&x}, [v](Node& out) {
        double* g = parent_grad(out, 0);
        if (!g) {
            return;
        }
        const double* X = parent_values(out, 0);
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t i = 0; i < v.inner; ++i) {
                const std::size_t base = o * v.n * v.inner + i;
                const double lse = out.values[o * v.inner + i];
                const double go = out.grad[o * v.inner + i];
                for (std::size_t k = 0; k < v.n; ++k) {
                    const auto idx = base + k * v.inner;
                    g[idx] += go * std::exp(X[idx] - lse);
                }
            }
        }
    });
}

Tensor biased_softmax_rows(const Tensor& x, std::span<const double> key_bias) {
    require_rank(x, 2, "biased_softmax_rows");
    const std::size_t M = x.dim(0), N = x.dim(1);
    if (key_bias.size() != N) {
        throw DimensionError("biased_softmax_rows: bias length " + std::to_string(key_bias.size()) +
                             " for " + shape_str(x.shape()));
    }
    const auto xv = x.values();
    std::vector<double> y(M * N, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < N; ++j) {
            if (key_bias[j] != -std::numeric_limits<double>::infinity()) {
                m = std::max(m, xv[i * N + j] + key_bias[j]);
            }
        }
        if (!std::isfinite(m)) {
            throw NumericError("biased_softmax_rows: every key is masked");
        }
        double s = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
            if (key_bias[j] != -std::numeric_limits<double>::infinity()) {
                const double e = std::exp(xv[i * N + j] + key_bias[j] - m);
                y[i * N + j] = e;
                s += e;
            }
        }
        for (std::size_t j = 0; j < N; ++j) {
            y[i * N + j] /= s;
        }
    }
    return make_result("biased_softmax_rows", x.shape(), std::move(y), {&x}, [M, N](Node& out) {
        double* g = parent_grad(out, 0);
        if (!g) {
            return;
        }
        const auto& Y = out.values;
        const auto& G = out.grad;
        for (std::size_t i = 0; i < M; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                dot += G[i * N + j] * Y[i * N + j];
            }
            for (std::size_t j = 0; j < N; ++j) {
                g[i * N + j] += Y[i * N + j] * (G[i * N + j] - dot);
            }
        }
    });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t n = x.shape().back();
    if (gain.numel() != n || bias.numel() != n) {
        throw DimensionError("layernorm: gain/bias length must equal last extent " + std::to_string(n));
    }
    const std::size_t rows = x.numel() / n;
    const auto xv = x.values();
    const auto gv = gain.values();
    const auto bv = bias.values();
    std::vector<double> y(xv.size());
    // xhat and 1/std are kept for the backward pass.
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * n;
        double mu = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            mu += xr[k];
        }
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            var += (xr[k] - mu) * (xr[k] - mu);
        }
        var /= static_cast<double>(n);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t k = 0; k < n; ++k) {
            const double xh = (xr[k] - mu) * rs;
            (*xhat)[r * n + k] = xh;
            y[r * n + k] = gv[k] * xh + bv[k];
        }
    }
    return make_result("layernorm", x.shape(), std::move(y), {&x, &gain, &bias},
                       [n, rows, xhat, rstd](Node& out) {
                           const double* G = out.grad.data();
                           const double* gain_v = parent_values(out, 1);
                           double* gx = parent_grad(out, 0);
                           double* gg = parent_grad(out, 1);
                           double* gb = parent_grad(out, 2);
                           std::vector<double> gxh(n);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* xh = xhat->data() + r * n;
                               const double* gr = G + r * n;
                               double mean_g = 0.0;
                               double mean_gx = 0.0;
                               for (std::size_t k = 0; k < n; ++k) {
                                   if (gg) {
                                       gg[k] += gr[k] * xh[k];
                                   }
                                   if (gb) {
                                       gb[k] += gr[k];
                                   }
                                   gxh[k] = gr[k] * gain_v[k];
                                   mean_g += gxh[k];
                                   mean_gx += gxh[k] * xh[k];
                               }
                               if (gx) {
                                   mean_g /= static_cast<double>(n);
                                   mean_gx /= static_cast<double>(n);
                                   const double rs = (*rstd)[r];
                                   for (std::size_t k = 0; k < n; ++k) {
                                       gx[r * n + k] += rs * (gxh[k] - mean_g - xh[k] * mean_gx);
                                   }
                               }
                           }
                       });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
    const auto ax = normalize_axis(axis, x.rank(), "slice");
    const auto v = axis_view(x.shape(), ax);
    if (begin >= end || end > v.n) {
        throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for extent " + std::to_string(v.n));
    }
    const std::size_t len = end - begin;
    Shape shape = x.shape();
    shape[ax] = len;
    const auto xv = x.values();
    std::vector<double> y(v.outer * len * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o) {
        std::copy_n(xv.data() + (o * v.n + begin) * v.inner, len * v.inner, y.data() + o * len * v.inner);
    }
    return make_result("slice", std::move(shape), std::move(y), {&x}, [v, begin, len](Node& out) {
        if (double* g = parent_grad(out, 0)) {
            for (std::size_t o = 0; o < v.outer; ++o) {
                const double* src = out.grad.data() + o * len * v.inner;
                double* dst = g + (o * v.n + begin) * v.inner;
                for (std::size_t i = 0; i < len * v.inner; ++i) {
                    dst[i] += src[i];
                }
            }
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) {
        throw DimensionError("concat: no inputs");
    }
    const auto ax = normalize_axis(axis, parts.front().rank(), "concat");
    Shape shape = parts.front().shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != shape.size()) {
            throw DimensionError("concat: rank mismatch");
        }
        for (std::size_t d = 0; d < shape.size(); ++d) {
            if (d != ax && p.shape()[d] != shape[d]) {
                throw DimensionError("concat: extent mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
            }
        }
        total += p.shape()[ax];
    }
    shape[ax] = total;
    const auto v = axis_view(shape, ax);
    std::vector<double> y(shape_numel(shape));
    std::vector<std::size_t> extents;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t len = p.shape()[ax];
        extents.push_back(len);
        const auto pv = p.values();
        for (std::size_t o = 0; o < v.outer; ++o) {
            std::copy_n(pv.data() + o * len * v.inner, len * v.inner, y.data() + (o * total + offset) * v.inner);
        }
        offset += len;
    }
    return make_result("concat", std::move(shape), std::move(y), parts, [v, total, extents](Node& out) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < extents.size(); ++p) {
            const std::size_t len = extents[p];
            if (double* g = parent_grad(out, p)) {
                for (std::size_t o = 0; o < v.outer; ++o) {
                    const double* src = out.grad.data() + (o * total + off) * v.inner;
                    double* dst = g + o * len * v.inner;
                    for (std::size_t i = 0; i < len * v.inner; ++i) {
                        dst[i] += src[i];
                    }
                }
            }
            off += len;
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " → " + shape_str(shape));
    }
    std::vector<double> y(x.values().begin(), x.values().end());
    return make_result("reshape", std::move(shape), std::move(y), {&x}, [](Node& out) {
        if (double* g = parent_grad(out, 0)) {
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                g[i] += out.grad[i];
            }
        }
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) {
        s += v;
    }
    return make_result("sum", {1}, {s}, {&x}, [](Node& out) {
        if (double* g = parent_grad(out, 0)) {
            const double go = out.grad[0];
            const std::size_t n = out.parents[0]->values.size();
            for (std::size_t i = 0; i < n; ++i) {
                g[i] += go;
            }
        }
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor gather_rows(const Tensor& table, std::span<const int> indices) {
    require_rank(table, 2, "gather_rows");
    const std::size_t R = table.dim(0), C = table.dim(1);
    if (indices.empty()) {
        throw DimensionError("gather_rows: empty index list");
    }
    std::vector<int> idx(indices.begin(), indices.end());
    const auto tv = table.values();
    std::vector<double> y(idx.size() * C);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= R) {
            throw DataError("gather_rows: index " + std::to_string(idx[r]) + " outside table of " +
                            std::to_string(R) + " rows");
        }
        std::copy_n(tv.data() + static_cast<std::size_t>(idx[r]) * C, C, y.data() + r * C);
    }
    return make_result("gather_rows", {idx.size(), C}, std::move(y), {&table}, [idx, C](Node& out) {
        if (double* g = parent_grad(out, 0)) {
            for (std::size_t r = 0; r < idx.size(); ++r) {
                double* dst = g + static_cast<std::size_t>(idx[r]) * C;
                const double* src = out.grad.data() + r * C;
                for (std::size_t c = 0; c < C; ++c) {
                    dst[c] += src[c];
                }
            }
        }
    });
}

Tensor pool_rows(const Tensor& x, std::size_t factor) {
    require_rank(x, 2, "pool_rows");
    if (factor == 0) {
        throw DimensionError("pool_rows: factor must be >= 1");
    }
    const std::size_t T = x.dim(0), C = x.dim(1);
    const std::size_t R = (T + factor - 1) / factor;
    const auto xv = x.values();
    std::vector<double> y(R * C, 0.0);
    for (std::size_t r = 0; r < R; ++r) {
        const std::size_t lo = r * factor, hi = std::min(T, lo + factor);
        for (std::size_t t = lo; t < hi; ++t) {
            for (std::size_t c = 0; c < C; ++c) {
                y[r * C + c] += xv[t * C + c];
            }
        }
        const double inv = 1.0 / static_cast<double>(hi - lo);
        for (std::size_t c = 0; c < C; ++c) {
            y[r * C + c] *= inv;
        }
    }
    return make_result("pool_rows", {R, C}, std::move(y), {&x}, [T, C, R, factor](Node& out) {
        if (double* g = parent_grad(out, 0)) {
            for (std::size_t r = 0; r < R; ++r) {
                const std::size_t lo = r * factor, hi = std::min(T, lo + factor);
                const double inv = 1.0 / static_cast<double>(hi - lo);
                for (std::size_t t = lo; t < hi; ++t) {
                    for (std::size_t c = 0; c < C; ++c) {
                        g[t * C + c] += out.grad[r * C + c] * inv;
                    }
                }
            }
        }
    });
}

Tensor repeat_rows(const Tensor& x, std::size_t factor, std::size_t out_rows) {
    require_rank(x, 2, "repeat_rows");
    const std::size_t R = x.dim(0), C = x.dim(1);
    if (factor == 0 || out_rows == 0 || (out_rows - 1) / factor >= R) {
        throw DimensionError("repeat_rows: cannot produce " + std::to_string(out_rows) + " rows from " +
                             std::to_string(R) + " with factor " + std::to_string(factor));
    }
    const auto xv = x.values();
    std::vector<double> y(out_rows * C);
    for (std::size_t r = 0; r < out_rows; ++r) {
        std::copy_n(xv.data() + (r / factor) * C, C, y.data() + r * C);
    }
    return make_result("repeat_rows", {out_rows, C}, std::move(y), {&x}, [C, factor, out_rows](Node& out) {
        if (double* g = parent_grad(out, 0)) {
            for (std::size_t r = 0; r < out_rows; ++r) {
                for (std::size_t c = 0; c < C; ++c) {
                    g[(r / factor) * C + c] += out.grad[r * C + c];
                }
            }
        }
    });
}

Tensor outer_add(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "outer_add");
    require_rank(b, 2, "outer_add");
    const std::size_t M = a.dim(0), N = b.dim(0), J = a.dim(1);
    if (b.dim(1) != J) {
        throw DimensionError("outer_add: column mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> y(M * N * J);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t n = 0; n < N; ++n) {
            double* dst = y.data() + (m * N + n) * J;
            for (std::size_t j = 0; j < J; ++j) {
                dst[j] = av[m * J + j] + bv[n * J + j];
            }
        }
    }
    return make_result("outer_add", {M * N, J}, std::move(y), {&a, &b}, [M, N, J](Node& out) {
        double* ga = parent_grad(out, 0);
        double* gb = parent_grad(out, 1);
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t n = 0; n < N; ++n) {
                const double* src = out.grad.data() + (m * N + n) * J;
                for (std::size_t j = 0; j < J; ++j) {
                    if (ga) {
                        ga[m * J + j] += src[j];
                    }
                    if (gb) {
                        gb[n * J + j] += src[j];
                    }
                }
            }
        }
    });
}

} // namespace ctxducer
