#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "ctxducer/numerics/tensor.hpp"

namespace ctxducer {

// Axis arguments accept -1 for the last axis.
inline constexpr int kLastAxis = -1;

Tensor matmul(const Tensor& a, const Tensor& b);     // [M×K]·[K×N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [M×K]·[N×K]ᵀ
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// [M×N] + row[N] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor relu(const Tensor& x);

Tensor softmax(const Tensor& x, int axis = kLastAxis);
Tensor log_softmax(const Tensor& x, int axis = kLastAxis);
// Reduces `axis`; a fully reduced result has shape {1}.
Tensor logsumexp(const Tensor& x, int axis = kLastAxis);

// Row softmax of x[M×N] + key_bias[N]. Bias entries may be -inf; those keys get
// weight exactly zero. At least one key per row must be unmasked.
Tensor biased_softmax_rows(const Tensor& x, std::span<const double> key_bias);

// Normalises over the last axis: gain * (x - mean) / sqrt(var + eps) + bias.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Rows of table[R×C] selected by indices → [n×C].
Tensor gather_rows(const Tensor& table, std::span<const int> indices);

// Mean-pools consecutive groups of `factor` rows; the trailing group may be short.
Tensor pool_rows(const Tensor& x, std::size_t factor);
// Nearest-repeat upsampling: row r of the output is row r/factor of x; truncated to out_rows.
Tensor repeat_rows(const Tensor& x, std::size_t factor, std::size_t out_rows);

// a[M×J], b[N×J] → [(M·N)×J] with row m·N+n = a[m] + b[n].
Tensor outer_add(const Tensor& a, const Tensor& b);

} // namespace ctxducer
