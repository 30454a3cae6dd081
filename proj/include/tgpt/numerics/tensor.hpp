#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tgpt/numerics/rng.hpp"

namespace tgpt {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        os << (i ? "," : "") << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until something is accumulated
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents.
    std::function<void(const Node&)> backward;

    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(data.size(), T(0));
        }
    }
};

/// Dense row-major array participating in reverse-mode differentiation.
///
/// Copies share the underlying node (handle semantics, like a framework
/// tensor). Operations in kernels.hpp build the graph; `backward` walks it.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        for (auto d : shape) {
            if (d == 0) {
                throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
            }
        }
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
        }
        auto node = std::make_shared<Node<T>>();
        node->shape = std::move(shape);
        node->data = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) {
            x = static_cast<T>(rng.normal() * stddev);
        }
        return from(std::move(shape), std::move(v), requires_grad);
    }

    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const Shape& shape() const { return node_->shape; }
    [[nodiscard]] std::size_t rank() const { return node_->shape.size(); }
    [[nodiscard]] std::size_t numel() const { return node_->data.size(); }

    /// Size of dimension `i`; negative indices count from the back.
    [[nodiscard]] std::size_t dim(int i) const {
        const int r = static_cast<int>(rank());
        const int k = i < 0 ? r + i : i;
        if (k < 0 || k >= r) {
            throw ShapeError("dimension " + std::to_string(i) + " out of range for " +
                             shape_str(shape()));
        }
        return node_->shape[static_cast<std::size_t>(k)];
    }

    [[nodiscard]] std::span<T> data() { return node_->data; }
    [[nodiscard]] std::span<const T> data() const { return node_->data; }
    [[nodiscard]] std::vector<T>& values() { return node_->data; }
    [[nodiscard]] const std::vector<T>& values() const { return node_->data; }

    [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
    [[nodiscard]] std::span<const T> grad() const { return node_->grad; }
    [[nodiscard]] std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }

    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad.clear(); }

    [[nodiscard]] const char* op() const { return node_->op; }

    [[nodiscard]] T item() const {
        if (numel() != 1) {
            throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        }
        return node_->data[0];
    }

    [[nodiscard]] T at(std::size_t flat) const { return node_->data.at(flat); }

    /// Fresh leaf holding a copy of the values.
    [[nodiscard]] Tensor detach(bool requires_grad = false) const {
        return from(shape(), node_->data, requires_grad);
    }

    template <class U>
    [[nodiscard]] Tensor<U> cast(bool requires_grad = false) const {
        std::vector<U> v(node_->data.begin(), node_->data.end());
        return Tensor<U>::from(shape(), std::move(v), requires_grad);
    }

    [[nodiscard]] Node<T>* node() const { return node_.get(); }
    [[nodiscard]] const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Builds the result node of a kernel. Parents and the backward closure are
/// only recorded when some parent takes part in differentiation.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(const Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    std::erase(parents, nullptr);
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const auto& p) { return p && p->requires_grad; });
    if (any) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Tensor<T>(std::move(node));
}

/// Accumulates d(loss)/d(x) into every reachable tensor that requires grad.
///
/// Interior gradients are reset on each call so a second call on the same
/// graph adds exactly one more copy of the gradient into the leaves.
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (auto* n : order) {
        if (n->backward) {
            n->grad.assign(n->data.size(), T(0));
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward) {
            n->backward(*n);
        }
    }
}

}  // namespace tgpt
