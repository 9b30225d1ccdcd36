#include "ctxducer/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "ctxducer/errors.hpp"

namespace ctxducer {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

namespace {

double scalar_value(const Tensor& t) {
    const double v = t.item();
    if (!std::isfinite(v)) {
        throw NumericError("grad_check: non-finite function value");
    }
    return v;
}

} // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
    Tensor leaf = Tensor::from_values(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
    return grad_check_leaf([&] { return f(leaf); }, leaf, eps);
}

double grad_check_leaf(const std::function<Tensor()>& loss, Tensor& leaf, double eps, std::size_t max_coords) {
    if (leaf.has_grad()) {
        leaf.zero_grad();
    }
    Tensor out = loss();
    scalar_value(out);
    backward(out);
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) {
        std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    }
    const std::size_t n = leaf.numel();
    const std::size_t count = (max_coords == 0 || max_coords >= n) ? n : max_coords;
    auto values = leaf.mutable_values();
    double worst = 0.0;
    for (std::size_t c = 0; c < count; ++c) {
        const std::size_t i = count == n ? c : (c * n) / count;
        const double saved = values[i];
        double plus = 0.0;
        double minus = 0.0;
        {
            NoGradGuard guard;
            values[i] = saved + eps;
            plus = scalar_value(loss());
            values[i] = saved - eps;
            minus = scalar_value(loss());
        }
        values[i] = saved;
        const double numeric = (plus - minus) / (2.0 * eps);
        worst = std::max(worst, relative_error(analytic[i], numeric));
    }
    return worst;
}

} // namespace ctxducer
