#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dsegnet/tensor.hpp"

namespace dseg {

// A vertex of the reverse-mode graph. `value` is never written after the node
// is created; gradients accumulate into the separate `grad` buffer.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    std::vector<std::shared_ptr<Node>> inputs;
    std::string op = "leaf";
    // Reads this node's grad and accumulates into the inputs that require it.
    std::function<void(Node&)> backward_rule;
    bool requires_grad = false;

    bool is_leaf() const { return !backward_rule; }
    bool has_grad() const { return !grad.empty(); }
    Tensor<T>& grad_buffer();
    void accumulate(const Tensor<T>& g);
    void accumulate(std::span<const T> g);
    void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false);

// Creates a result node. When gradient recording is off, or no input needs a
// gradient, the node is detached: no inputs are retained and no rule is kept.
template <typename T>
Var<T> make_result(Tensor<T> value, std::string op, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> rule);

// Propagates d(loss)/d(node) to every reachable node in reverse topological
// order. The loss must have shape (1,1,1,1). Intermediate gradients are reset
// at the start of each call; leaf gradients accumulate across calls until the
// caller zeroes them.
template <typename T>
void backward(const Var<T>& loss);

bool grad_enabled();

// Disables graph recording for the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace dseg
