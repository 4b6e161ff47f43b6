#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stableidm/numcore/tape.hpp"

namespace stableidm::numcore {

/// Named, ordered view over the trainable tensors of a model. Order is the
/// registration order and fixes every reduction that walks parameters.
class ParamRegistry {
public:
    void add(std::string name, Tensor* t) { entries_.emplace_back(std::move(name), t); }

    const std::vector<std::pair<std::string, Tensor*>>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.second->size();
        return n;
    }

private:
    std::vector<std::pair<std::string, Tensor*>> entries_;
};

/// Sums parameter gradients over several tapes (one per sample).
class GradAccumulator {
public:
    explicit GradAccumulator(const ParamRegistry& reg) {
        for (const auto& [name, t] : reg.entries()) grads_.emplace(t, Tensor::zeros(t->shape()));
    }

    void collect(const Tape& tape) {
        for (const auto& [ptr, id] : tape.bindings()) {
            auto it = grads_.find(ptr);
            if (it == grads_.end() || !tape.has_grad(id)) continue;
            it->second += tape.grad(Var{const_cast<Tape*>(&tape), id});
        }
    }

    const Tensor& grad(const Tensor* p) const { return grads_.at(p); }

    void scale(double s) {
        for (auto& [p, g] : grads_) {
            for (auto& v : g.data()) v *= s;
        }
    }

private:
    std::unordered_map<const Tensor*, Tensor> grads_;
};

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(const ParamRegistry& reg, AdamOptions opts) : reg_(&reg), opts_(opts) {
        for (const auto& [name, t] : reg.entries()) {
            m_.emplace_back(Tensor::zeros(t->shape()));
            v_.emplace_back(Tensor::zeros(t->shape()));
        }
    }

    void step(const GradAccumulator& grads) {
        ++steps_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
        const auto& entries = reg_->entries();
        for (std::size_t k = 0; k < entries.size(); ++k) {
            Tensor& p = *entries[k].second;
            const Tensor& g = grads.grad(&p);
            Tensor& m = m_[k];
            Tensor& v = v_[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
                v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                p[i] -= opts_.learning_rate * mh / (std::sqrt(vh) + opts_.eps);
            }
        }
    }

    std::size_t steps() const noexcept { return steps_; }

private:
    const ParamRegistry* reg_;
    AdamOptions opts_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::size_t steps_ = 0;
};

}  // namespace stableidm::numcore
