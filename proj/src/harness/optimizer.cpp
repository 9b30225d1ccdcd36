#include "ctxducer/harness/optimizer.hpp"

#include <cmath>

#include "ctxducer/errors.hpp"

namespace ctxducer {

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(Parameters& params) {
    auto& entries = params.entries();
    if (m_.empty()) {
        for (const auto& [name, t] : entries) {
            m_.emplace_back(t.numel(), 0.0);
            v_.emplace_back(t.numel(), 0.0);
        }
    }
    if (m_.size() != entries.size()) {
        throw DimensionError("optimizer state covers " + std::to_string(m_.size()) + " tensors, model has " +
                             std::to_string(entries.size()));
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < entries.size(); ++k) {
        // A tensor the step's graph never reached has zero gradient; its moments
        // still decay, whether or not a grad buffer happens to be allocated.
        Tensor& p = entries[k].second;
        auto w = p.mutable_values();
        const bool has = p.has_grad();
        const auto g = has ? p.grad() : std::span<const double>{};
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
    params.bump_version();
}

std::vector<NamedTensor> Adam::state() const {
    std::vector<NamedTensor> out;
    out.emplace_back("adam.t", Tensor::scalar(static_cast<double>(t_)));
    for (std::size_t k = 0; k < m_.size(); ++k) {
        out.emplace_back("adam.m." + std::to_string(k), Tensor::from_values({m_[k].size()}, m_[k]));
        out.emplace_back("adam.v." + std::to_string(k), Tensor::from_values({v_[k].size()}, v_[k]));
    }
    return out;
}

void Adam::load_state(const std::vector<NamedTensor>& state) {
    m_.clear();
    v_.clear();
    t_ = 0;
    for (const auto& [name, t] : state) {
        if (name == "adam.t") {
            t_ = static_cast<std::uint64_t>(t.item());
        } else if (name.rfind("adam.m.", 0) == 0) {
            m_.emplace_back(t.values().begin(), t.values().end());
        } else if (name.rfind("adam.v.", 0) == 0) {
            v_.emplace_back(t.values().begin(), t.values().end());
        }
    }
    if (m_.size() != v_.size()) {
        throw FormatError("optimizer state: moment tensors are incomplete");
    }
}

void Sgd::step(Parameters& params) {
    for (auto& [name, p] : params.entries()) {
        if (!p.has_grad()) {
            continue;
        }
        auto w = p.mutable_values();
        const auto g = p.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] -= lr_ * g[i];
        }
    }
    params.bump_version();
}

std::unique_ptr<Optimizer> make_optimizer(const TrainingConfig& t) {
    if (t.optimizer == OptimizerKind::Adam) {
        return std::make_unique<Adam>(t.learning_rate);
    }
    return std::make_unique<Sgd>(t.learning_rate);
}

} // namespace ctxducer
