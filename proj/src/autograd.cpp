#include "dsegnet/autograd.hpp"

#include <unordered_set>
#include <utility>

#include "dsegnet/error.hpp"

namespace dseg {
namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
    if (grad.empty() && value.numel() > 0) grad = Tensor<T>(value.shape());
    return grad;
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
    if (!(g.shape() == value.shape())) {
        throw DimensionError("gradient " + g.shape().str() + " does not match value " + value.shape().str() +
                             " of '" + op + "'");
    }
    accumulate(g.data());
}

template <typename T>
void Node<T>::accumulate(std::span<const T> g) {
    Tensor<T>& buf = grad_buffer();
    if (g.size() != buf.numel()) throw DimensionError("gradient length mismatch for '" + op + "'");
    T* d = buf.ptr();
    for (std::size_t k = 0; k < g.size(); ++k) d[k] += g[k];
}

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::string op, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> rule) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = std::move(op);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
    }
    if (needs) {
        n->requires_grad = true;
        n->inputs = std::move(inputs);
        n->backward_rule = std::move(rule);
    }
    return n;
}

template <typename T>
void backward(const Var<T>& loss) {
    if (!loss) throw Error("backward: null loss");
    if (!(loss->value.shape() == Shape{1, 1, 1, 1})) {
        throw DimensionError("backward: loss must be scalar (1,1,1,1), got " + loss->value.shape().str());
    }
    if (!loss->requires_grad) return;

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* n : order) {
        if (!n->is_leaf()) n->zero_grad();
    }
    loss->grad_buffer().fill(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->is_leaf() && n->has_grad()) n->backward_rule(*n);
    }
}

template struct Node<float>;
template struct Node<double>;
template Var<float> make_leaf(Tensor<float>, bool);
template Var<double> make_leaf(Tensor<double>, bool);
template Var<float> make_result(Tensor<float>, std::string, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::string, std::vector<Var<double>>,
                                 std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace dseg
