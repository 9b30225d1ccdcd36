#include "ctxducer/numerics/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "ctxducer/errors.hpp"

namespace ctxducer {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "×" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) {
        throw DimensionError("tensor shape must have rank >= 1");
    }
    for (auto e : shape) {
        if (e == 0) {
            throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        }
    }
}

Tensor make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(shape));
    }
    detail::check_finite("from_values", values);
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
    if (!node) {
        throw std::logic_error("use of an undefined tensor");
    }
    return *node;
}

} // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    return make_leaf(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value) { return make_leaf({1}, {value}, false); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).values.size(); }

std::span<const double> Tensor::values() const { return checked(node_).values; }

std::span<double> Tensor::mutable_values() {
    checked(node_);
    return node_->values;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->values[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    const auto& s = shape();
    if (s.size() != 2) {
        throw DimensionError("at(i, j) needs a matrix");
    }
    return node_->values[i * s[1] + j];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

std::span<double> Tensor::mutable_grad() {
    checked(node_);
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    checked(node_);
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    const auto& n = checked(node_);
    return make_leaf(n.shape, n.values, false);
}

void backward(const Tensor& root) {
    if (root.numel() != 1) {
        throw DimensionError("backward() needs a single-element root, got " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace detail {

void check_finite(const char* op, std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}

namespace {

template <typename Range>
Tensor make_result_impl(const char* op, Shape shape, std::vector<double> values, const Range& inputs,
                        BackwardFn fn) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw std::logic_error(std::string("op ") + op + " produced inconsistent shape");
    }
    check_finite(op, values);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    if (t_grad_enabled) {
        bool any = false;
        for (const auto& in : inputs) {
            if (in.requires_grad()) {
                any = true;
                break;
            }
        }
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (const auto& in : inputs) {
                node->parents.push_back(in.node());
            }
            node->backward_fn = std::move(fn);
        }
    }
    return Tensor(std::move(node));
}

struct PtrRange {
    std::initializer_list<const Tensor*> list;
    struct It {
        const Tensor* const* p;
        const Tensor& operator*() const { return **p; }
        It& operator++() {
            ++p;
            return *this;
        }
        bool operator!=(const It& o) const { return p != o.p; }
    };
    It begin() const { return It{list.begin()}; }
    It end() const { return It{list.end()}; }
    std::size_t size() const { return list.size(); }
};

} // namespace

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
    return make_result_impl(op, std::move(shape), std::move(values), PtrRange{inputs}, std::move(fn));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn fn) {
    return make_result_impl(op, std::move(shape), std::move(values), inputs, std::move(fn));
}

} // namespace detail

} // namespace ctxducer
