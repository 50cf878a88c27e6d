#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace isda {

using real = double;

/// Dense n-dimensional array node. Holds the value, an optional gradient
/// buffer and, when recorded on a tape, the parents plus the closure that
/// propagates gradients to them.
struct Node {
    std::vector<int> shape;
    std::vector<real> data;
    std::vector<real> grad;  // lazily allocated, same length as data
    bool requires_grad = false;
    const char* op = "leaf";

    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&, struct BackCtx&)> backward_fn;

    std::int64_t size() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
};

/// Gradient buffers kept outside the nodes. Used when several backward
/// passes over shared parameters must not touch each other's state
/// (per-image losses evaluated concurrently).
class GradSink {
public:
    std::span<real> buffer(const Node& n);
    const std::vector<real>* find(const Node& n) const;
    void clear() { bufs_.clear(); }

private:
    std::unordered_map<const Node*, std::vector<real>> bufs_;
};

struct BackCtx {
    GradSink* sink = nullptr;
    // Accumulation target for `n` (zero-initialized on first touch).
    std::span<real> grad(Node& n);
    // Upstream gradient of `n`; must already exist.
    std::span<const real> grad_of(const Node& n);
};

/// Value-semantic handle to a Node. Copies share the underlying buffer;
/// `clone` makes an independent leaf.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, real value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<real> data,
                            bool requires_grad = false);
    static Tensor scalar(real value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    std::int64_t size() const { return node_->size(); }

    real* data() { return node_->data.data(); }
    const real* data() const { return node_->data.data(); }
    std::vector<real>& vec() { return node_->data; }
    const std::vector<real>& vec() const { return node_->data; }
    real item() const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v);
    real* grad();
    const std::vector<real>& grad_vec() const { return node_->grad; }
    void zero_grad();

    Tensor detach() const;  // copy of the value, off the tape
    Tensor clone() const;   // independent leaf with the same value/flags

    Node* node() const { return node_.get(); }
    std::shared_ptr<Node> node_ptr() const { return node_; }

    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<Node> node_;
};

/// True while operations should record the tape (thread-local).
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Reverse-mode sweep from a scalar loss. Gradients land in each leaf's
/// own buffer, or in `sink` when given. Throws on non-scalar loss,
/// non-finite loss, or a cycle in the recorded graph.
void backward(const Tensor& loss, GradSink* sink = nullptr);

bool all_finite(const Tensor& t);
std::int64_t shape_size(const std::vector<int>& shape);

}  // namespace isda
