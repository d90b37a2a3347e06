#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "physhdr/nn/tensor.hpp"

namespace physhdr::nn {

struct Node {
    Tensor value;
    Tensor grad;  ///< empty until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    /// Reads `grad` of this node and accumulates into the parents.
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer();
    void accumulate(const Tensor& g);
};

/// Handle to a graph node. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(int i) const { return node_->value.dim(i); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    /// Gradient after backward(); zeros if none reached this node.
    Tensor grad() const;
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad();

    /// Scalar value of a one-element tensor.
    double item() const;

    /// Same value, cut from the graph.
    Var detach() const { return Var(node_->value, false); }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Reverse-mode accumulation from a one-element tensor.
void backward(const Var& loss);

bool grad_enabled();

/// Disables graph recording for the current thread within its scope.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Builds an op result. When no parent requires a gradient (or recording is
/// off) the result is a constant and `fn` is dropped.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn);

} // namespace physhdr::nn
