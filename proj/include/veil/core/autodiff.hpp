#pragma once

#include <atomic>
#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "veil/core/tensor.hpp"

namespace veil::nn {

// Reverse-mode autodiff over Tensor<T>. Graphs are built eagerly by the op
// functions in ops.hpp/conv.hpp/norm.hpp and freed when the Vars go out of
// scope. A node without grad-requiring parents is stored as a constant: its
// parents and backprop closure are dropped at construction, so frozen
// networks cost no graph memory.
template <typename T>
class Node {
public:
    Tensor<T> value;
    Tensor<T> grad; // allocated on demand in backward()
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop; // accumulates into parents' grads

    bool grad_ready() const { return grad.numel() == value.numel(); }

    void ensure_grad() {
        if (!grad_ready()) grad = Tensor<T>::zeros(value.shape());
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
} // namespace detail

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->id = detail::next_node_id();
    return n;
}

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->id = detail::next_node_id();
    bool any = false;
    for (const auto& p : parents) any = any || (p && p->requires_grad);
    if (any) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

// Constant copy of a node's value, cut off from the graph.
template <typename T>
Var<T> detach(const Var<T>& v) {
    return make_leaf(v->value, false);
}

// Runs reverse-mode accumulation from `root`, which must be scalar unless a
// seed gradient is supplied. Node ids increase from parents to children, so
// descending-id order over the reachable set is a valid reverse topological
// order.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
    check(root != nullptr, "backward: null root");
    if (!root->requires_grad) return;
    if (!seed) check(root->value.numel() == 1, "backward: root must be scalar");

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

    root->ensure_grad();
    if (seed) {
        check(seed->numel() == root->value.numel(), "backward: seed shape mismatch");
        for (std::size_t i = 0; i < seed->numel(); ++i) root->grad[i] += (*seed)[i];
    } else {
        root->grad[0] += T(1);
    }

    for (Node<T>* n : order) {
        if (n->backprop && n->grad_ready()) n->backprop(*n);
    }
}

template <typename T>
double scalar_value(const Var<T>& v) {
    check(v->value.numel() == 1, "scalar_value: not a scalar");
    return static_cast<double>(v->value[0]);
}

} // namespace veil::nn
