#include "pamdn/autograd.hpp"

#include "pamdn/error.hpp"

namespace pamdn {

Var::Var(Tensor value) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
}

Var Var::parameter(Tensor value) {
    Var v(std::move(value));
    v.node_->value.set_requires_grad(true);
    return v;
}

Var Var::detach() const {
    Tensor copy(node_->value.shape(), std::vector<double>(node_->value.data().begin(), node_->value.data().end()));
    return Var(std::move(copy));
}

Var Tape::emit(Tensor value, std::initializer_list<const Var*> inputs, BackwardFn backward) {
    bool needs_grad = false;
    if (recording_) {
        for (const Var* in : inputs) {
            if (in->requires_grad()) {
                needs_grad = true;
                break;
            }
        }
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (needs_grad) {
        node->value.set_requires_grad(true);
        node->backward = std::move(backward);
        nodes_.push_back(node);
    }
    return Var(std::move(node));
}

void Tape::backward(const Var& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw UsageError("backward requires a scalar loss, got shape " +
                         (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) return;
    loss.node()->value.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (!n.value.has_grad() || !n.backward) continue;
        n.backward(n);
    }
}

std::span<double> grad_sink(const Var& v) {
    if (!v.requires_grad()) return {};
    return v.node()->value.grad();
}

}  // namespace pamdn
