#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "ctxducer/harness/config.hpp"
#include "ctxducer/model/parameters.hpp"

namespace ctxducer {

// Applies one update from the accumulated grads, then bumps the parameter
// version. State round-trips through named tensors for resumable runs.
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(Parameters& params) = 0;
    virtual std::vector<NamedTensor> state() const = 0;
    virtual void load_state(const std::vector<NamedTensor>& state) = 0;
};

class Adam : public Optimizer {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(Parameters& params) override;
    std::vector<NamedTensor> state() const override;
    void load_state(const std::vector<NamedTensor>& state) override;
    std::uint64_t steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

class Sgd : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(lr) {}
    void step(Parameters& params) override;
    std::vector<NamedTensor> state() const override { return {}; }
    void load_state(const std::vector<NamedTensor>&) override {}

private:
    double lr_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainingConfig& t);

} // namespace ctxducer
