#include "physhdr/nn/autograd.hpp"

#include <unordered_set>

#include "physhdr/error.hpp"

namespace physhdr::nn {

namespace {
thread_local bool g_grad_enabled = true;
} // namespace

Tensor& Node::grad_buffer() {
    if (grad.empty() && value.numel() > 0) grad = Tensor::zeros_like(value);
    return grad;
}

void Node::accumulate(const Tensor& g) {
    if (grad.empty()) {
        grad = g;
        return;
    }
    grad.add_(g);
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (!node_->grad.empty()) return node_->grad;
    return Tensor::zeros_like(node_->value);
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

double Var::item() const {
    if (node_->value.numel() != 1) {
        throw ShapeError("item() on tensor of shape " + to_string(node_->value.shape()));
    }
    return node_->value[0];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(fn);
    }
    return Var(std::move(node));
}

void backward(const Var& loss) {
    if (!loss.defined() || loss.value().numel() != 1) {
        throw ShapeError("backward() needs a one-element loss");
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    Node* root = loss.node().get();
    root->accumulate(Tensor(root->value.shape(), 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

} // namespace physhdr::nn
