#include "isda/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace isda {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::int64_t shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension");
        n *= d;
    }
    return n;
}

std::span<real> GradSink::buffer(const Node& n) {
    auto& buf = bufs_[&n];
    if (buf.empty()) buf.assign(static_cast<size_t>(n.size()), 0.0);
    return {buf.data(), buf.size()};
}

const std::vector<real>* GradSink::find(const Node& n) const {
    auto it = bufs_.find(&n);
    return it == bufs_.end() ? nullptr : &it->second;
}

std::span<real> BackCtx::grad(Node& n) {
    if (sink) return sink->buffer(n);
    if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.size()), 0.0);
    return {n.grad.data(), n.grad.size()};
}

std::span<const real> BackCtx::grad_of(const Node& n) {
    if (sink) {
        const std::vector<real>* buf = sink->find(n);
        if (!buf) throw std::logic_error("backward: missing upstream gradient");
        return {buf->data(), buf->size()};
    }
    if (n.grad.empty()) throw std::logic_error("backward: missing upstream gradient");
    return {n.grad.data(), n.grad.size()};
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(shape_size(n->shape)), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, real value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.vec()) v = value;
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<real> data, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    if (static_cast<std::int64_t>(data.size()) != shape_size(n->shape))
        throw std::invalid_argument("from_data: data length does not match shape");
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

real Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor is not a scalar");
    return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
    if (v && !node_->parents.empty())
        throw std::invalid_argument("requires_grad can only be set on leaves");
    node_->requires_grad = v;
    return *this;
}

real* Tensor::grad() {
    if (node_->grad.empty()) node_->grad.assign(static_cast<size_t>(size()), 0.0);
    return node_->grad.data();
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    return Tensor(std::move(n));
}

Tensor Tensor::clone() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    n->requires_grad = node_->requires_grad;
    return Tensor(std::move(n));
}

bool all_finite(const Tensor& t) {
    for (real v : t.vec())
        if (!std::isfinite(v)) return false;
    return true;
}

void backward(const Tensor& loss, GradSink* sink) {
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    if (!std::isfinite(loss.data()[0]))
        throw std::runtime_error("backward: loss is not finite");

    // Iterative DFS. state 1 = on stack, 2 = done; revisiting a node in
    // state 1 means the recorded graph has a cycle.
    std::vector<Node*> order;
    std::unordered_map<Node*, int> state;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    state[loss.node()] = 1;
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            auto it = state.find(p);
            if (it == state.end()) {
                state[p] = 1;
                stack.emplace_back(p, 0);
            } else if (it->second == 1) {
                throw std::runtime_error("backward: cycle detected");
            }
        } else {
            state[n] = 2;
            order.push_back(n);
            stack.pop_back();
        }
    }

    BackCtx ctx{sink};
    auto seed = ctx.grad(*loss.node());
    seed[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n, ctx);
    }
}

}  // namespace isda
