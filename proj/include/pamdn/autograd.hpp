#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "pamdn/tensor.hpp"

namespace pamdn {

struct Node;

// Propagates the gradient held by `out` into the inputs captured by the closure.
using BackwardFn = std::function<void(const Node& out)>;

struct Node {
    Tensor value;
    BackwardFn backward;
};

/// Shared handle to a tensor that may take part in a recorded computation.
///
/// Parameters are long-lived leaf Vars owned by a model; intermediates are
/// produced by the functions in ops.hpp and kept alive by the tape that
/// recorded them.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value);

    static Var parameter(Tensor value);
    static Var constant(Tensor value) { return Var(std::move(value)); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    // Direct mutation is for leaves (optimizer updates, loading weights).
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }
    std::span<const double> data() const { return node_->value.data(); }

    bool requires_grad() const { return node_ && node_->value.requires_grad(); }
    bool has_grad() const { return node_->value.has_grad(); }
    std::span<const double> grad() const { return node_->value.grad(); }
    // Lazily allocated accumulation buffer.
    std::span<double> grad_buffer() { return node_->value.grad(); }
    void zero_grad() { node_->value.zero_grad(); }

    // New leaf sharing no history with this one.
    Var detach() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    friend class Tape;

    std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations for reverse-mode replay.
///
/// A non-recording tape evaluates forward passes only; nothing is retained
/// and every result is a plain constant. A single tape must not be shared
/// across threads.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    // Builds the result node of an operation. When recording and any input
    // requires a gradient, the node is appended with its backward rule.
    Var emit(Tensor value, std::initializer_list<const Var*> inputs, BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 and replays the recorded nodes in reverse.
    void backward(const Var& loss);

    void clear() { nodes_.clear(); }

private:
    bool recording_;
    std::vector<std::shared_ptr<Node>> nodes_;
};

// Gradient buffer of `v` if it participates in differentiation, else empty.
std::span<double> grad_sink(const Var& v);

}  // namespace pamdn
