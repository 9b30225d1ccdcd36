#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ctxducer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents that require grad.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(values.size(), 0.0);
        }
    }
};

} // namespace detail

// Dense row-major float64 tensor. A Tensor is a cheap handle; values are
// immutable after construction except through mutable_values(), which is
// reserved for parameter initialisation and optimiser updates.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    std::span<double> mutable_values();
    double item() const;
    double at(std::size_t i) const { return values()[i]; }
    double at(std::size_t i, std::size_t j) const;

    bool requires_grad() const;
    bool has_grad() const;
    // Empty span when no gradient has been accumulated yet.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // New leaf with copied values and no history.
    Tensor detach() const;

    bool same_as(const Tensor& other) const noexcept { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Reverse-mode sweep from a single-element tensor. Gradients accumulate
// additively; callers zero parameter grads between steps.
void backward(const Tensor& root);

bool grad_enabled() noexcept;

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() noexcept;
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

using BackwardFn = std::function<void(Node&)>;

// Builds an op result: validates finiteness, and records history when grad mode
// is on and any input requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn);
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn fn);

void check_finite(const char* op, std::span<const double> values);

} // namespace detail

} // namespace ctxducer
