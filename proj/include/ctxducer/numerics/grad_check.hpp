#pragma once

#include <functional>

#include "ctxducer/numerics/tensor.hpp"

namespace ctxducer {

inline constexpr double kFiniteDifferenceEps = 1e-5;

// Compares the reverse-mode gradient of a scalar function at x against central
// finite differences. Returns max over coordinates of |a-n| / max(|a|, |n|, 1e-8).
// `f` must build its graph from the tensor it is given.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = kFiniteDifferenceEps);

// Same comparison for an arbitrary leaf tensor (e.g. a model parameter) that `loss`
// reads implicitly. Probes every coordinate, or `max_coords` evenly spaced ones.
double grad_check_leaf(const std::function<Tensor()>& loss, Tensor& leaf, double eps = kFiniteDifferenceEps,
                       std::size_t max_coords = 0);

double relative_error(double analytic, double numeric);

} // namespace ctxducer
