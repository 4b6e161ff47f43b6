#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stableidm/numcore/tensor.hpp"

namespace stableidm::numcore {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = std::numeric_limits<std::size_t>::max();

    bool valid() const noexcept { return tape != nullptr; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Records primitive ops in execution order together with the closures that
/// propagate gradients back to their inputs. A tape is single-threaded.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// When disabled, param() produces constant leaves and no gradients are
    /// tracked. Inference runs with training off.
    void set_training(bool on) noexcept { training_ = on; }
    bool training() const noexcept { return training_; }

    Var constant(Tensor value) { return push(std::move(value), nullptr, {}, false, nullptr); }

    Var leaf(Tensor value, bool requires_grad = true) {
        return push(std::move(value), nullptr, {}, requires_grad, nullptr);
    }

    /// Borrow a parameter tensor. The same tensor always maps to the same
    /// leaf on one tape, so gradients from repeated uses accumulate there.
    /// The tensor must outlive the tape and must not change while recorded.
    Var param(const Tensor& p) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) return Var{this, it->second};
        Var v = push(Tensor{}, &p, {}, training_, nullptr);
        bound_.emplace(&p, v.id);
        bindings_.emplace_back(&p, v.id);
        return v;
    }

    /// Append an op result. Requires-grad propagates from any input.
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn, const char* op_name) {
        if (!value.all_finite()) {
            throw NumericError(std::string("non-finite value produced by ") + op_name);
        }
        bool rg = false;
        for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
        return push(std::move(value), nullptr, std::move(inputs), rg, rg ? std::move(fn) : BackwardFn{});
    }

    const Tensor& value(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.borrowed ? *n.borrowed : n.value;
    }
    const Tensor& value(Var v) const { return value(v.id); }

    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    bool requires_grad(Var v) const { return requires_grad(v.id); }

    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

    /// Gradient buffer for node id, allocated as zeros on first touch.
    Tensor& grad_buffer(std::size_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.empty()) n.grad = Tensor::zeros(value(id).shape());
        return n.grad;
    }

    bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

    /// Gradient of the last backward() w.r.t. node v (zeros when v is not on
    /// any path to the loss).
    Tensor grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        if (n.grad.empty()) return Tensor::zeros(value(v.id).shape());
        return n.grad;
    }

    void backward(Var loss) {
        if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
        const Tensor& lv = value(loss.id);
        if (lv.size() != 1) {
            throw ContractError("backward: loss must be a scalar, got shape " + shape_str(lv.shape()));
        }
        for (auto& n : nodes_) n.grad = Tensor{};
        visit_order_.clear();
        if (!nodes_[loss.id].requires_grad) return;
        grad_buffer(loss.id)[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.empty()) continue;
            visit_order_.push_back(i);
            n.backward(*this, i);
        }
    }

    /// Ops whose backward closure ran during the last backward(), in call order.
    const std::vector<std::size_t>& visit_order() const noexcept { return visit_order_; }

    /// Parameter tensors bound via param(), in first-use order.
    const std::vector<std::pair<const Tensor*, std::size_t>>& bindings() const noexcept { return bindings_; }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        const Tensor* borrowed = nullptr;
        Tensor grad;
        std::vector<std::size_t> inputs;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var push(Tensor value, const Tensor* borrowed, std::vector<std::size_t> inputs, bool rg, BackwardFn fn) {
        Node n;
        n.value = std::move(value);
        n.borrowed = borrowed;
        n.inputs = std::move(inputs);
        n.requires_grad = rg;
        n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{this, nodes_.size() - 1};
    }

    std::deque<Node> nodes_;  // stable addresses: value() references survive later records
    std::unordered_map<const Tensor*, std::size_t> bound_;
    std::vector<std::pair<const Tensor*, std::size_t>> bindings_;
    std::vector<std::size_t> visit_order_;
    bool training_ = true;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace stableidm::numcore
