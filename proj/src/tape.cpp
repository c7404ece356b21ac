#include "adcsl/tape.hpp"

#include "adcsl/errors.hpp"

namespace adcsl {

Tape& Var::tape() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return *tape_;
}

const Tensor& Var::value() const { return tape().value(*this); }

Tensor Var::grad() const { return tape().grad(*this); }

Var Tape::leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), std::nullopt, nullptr, true});
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), std::nullopt, nullptr, false});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::vector<Var>(parents), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
    bool needs = false;
    for (const auto& p : parents) {
        check_owned(p);
        needs = needs || nodes_[p.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), std::nullopt, needs ? std::move(backward) : nullptr, needs});
    return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(const Var& v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("Var does not belong to this tape");
}

const Tensor& Tape::value(const Var& v) const {
    check_owned(v);
    return nodes_[v.id()].value;
}

bool Tape::requires_grad(const Var& v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
}

bool Tape::has_grad(const Var& v) const {
    check_owned(v);
    return nodes_[v.id()].grad.has_value();
}

Tensor Tape::grad(const Var& v) const {
    check_owned(v);
    const auto& node = nodes_[v.id()];
    return node.grad ? *node.grad : Tensor::zeros(node.value.shape());
}

Tensor* Tape::grad_buffer(const Var& v) {
    check_owned(v);
    auto& node = nodes_[v.id()];
    if (!node.requires_grad) return nullptr;
    if (!node.grad) node.grad = Tensor::zeros(node.value.shape());
    return &*node.grad;
}

void Tape::accumulate(const Var& v, const Tensor& g) {
    Tensor* buf = grad_buffer(v);
    if (!buf) return;
    if (buf->shape() != g.shape()) {
        throw DimensionError("gradient shape " + shape_string(g.shape()) + " does not match value " +
                             shape_string(buf->shape()));
    }
    auto dst = buf->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(const Var& scalar_output) {
    check_owned(scalar_output);
    if (nodes_[scalar_output.id()].value.size() != 1) {
        throw ContractError("backward() without a seed needs a scalar output, got " +
                            shape_string(nodes_[scalar_output.id()].value.shape()));
    }
    backward(scalar_output, Tensor::ones(nodes_[scalar_output.id()].value.shape()));
}

void Tape::backward(const Var& output, const Tensor& seed) {
    check_owned(output);
    if (seed.shape() != nodes_[output.id()].value.shape()) {
        throw DimensionError("seed shape " + shape_string(seed.shape()) + " does not match output " +
                             shape_string(nodes_[output.id()].value.shape()));
    }
    for (auto& n : nodes_) n.grad.reset();
    if (!nodes_[output.id()].requires_grad) return;
    nodes_[output.id()].grad = seed;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (!node.grad || !node.backward) continue;
        // Rules only touch parent slots; nodes_ is never resized during backward.
        node.backward(*this, *node.grad);
    }
}

}  // namespace adcsl
