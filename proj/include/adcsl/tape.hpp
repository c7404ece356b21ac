#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <vector>

#include "adcsl/tensor.hpp"

namespace adcsl {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape& tape() const;
    std::size_t id() const noexcept { return id_; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    /// Gradient accumulated by the last backward pass (zeros if the node was not reached).
    Tensor grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents always
/// precede children and replaying ids in reverse is a valid topological order.
class Tape {
public:
    /// Receives the gradient flowing into the node and pushes contributions to its parents.
    using BackwardFn = std::function<void(Tape&, const Tensor&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value);
    Var constant(Tensor value);
    /// Records an op output. The backward rule is kept only if some parent needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
    Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward);

    const Tensor& value(const Var& v) const;
    bool requires_grad(const Var& v) const;
    Tensor grad(const Var& v) const;
    bool has_grad(const Var& v) const;

    /// Adds `g` into the gradient slot of `v` (no-op for constants).
    void accumulate(const Var& v, const Tensor& g);
    /// Zero-initialised gradient buffer for in-place scatter-adds; nullptr for constants.
    Tensor* grad_buffer(const Var& v);

    /// Backpropagates from a scalar output. Clears gradients from any previous pass first.
    void backward(const Var& scalar_output);
    /// Vector-Jacobian product: backpropagates `seed` from an arbitrary-shaped output.
    void backward(const Var& output, const Tensor& seed);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::optional<Tensor> grad;
        BackwardFn backward;
        bool requires_grad = false;
    };

    void check_owned(const Var& v) const;

    // deque: value() references stay valid while later ops append nodes
    std::deque<Node> nodes_;
};

}  // namespace adcsl
