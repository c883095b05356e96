#pragma once

// Reverse-mode differentiation record. Nodes are appended in execution
// order, so the node list is already a topological order; backward walks it
// once in reverse.

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvembed/nn/tensor.hpp"

namespace mvembed::nn {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
};

/// Named trainable tensors in a fixed, deterministic order. Addresses stay
/// stable after construction; do not add parameters while a Tape refers to
/// them.
template <class T>
class ParameterSet {
public:
    Parameter<T>& add(std::string name, Tensor<T> value) {
        if (index_.contains(name)) throw Error("duplicate parameter name " + name);
        index_.emplace(name, params_.size());
        Tensor<T> grad(value.shape());
        params_.push_back({std::move(name), std::move(value), std::move(grad)});
        return params_.back();
    }

    bool contains(const std::string& name) const { return index_.contains(name); }
    Parameter<T>& at(const std::string& name) { return params_.at(lookup(name)); }
    const Parameter<T>& at(const std::string& name) const { return params_.at(lookup(name)); }

    std::size_t size() const noexcept { return params_.size(); }
    auto begin() noexcept { return params_.begin(); }
    auto end() noexcept { return params_.end(); }
    auto begin() const noexcept { return params_.begin(); }
    auto end() const noexcept { return params_.end(); }
    Parameter<T>& operator[](std::size_t i) { return params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

    void zero_grad() {
        for (auto& p : params_) p.grad.fill(T{0});
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void reserve(std::size_t n) { params_.reserve(n); }

private:
    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter " + name);
        return it->second;
    }

    std::vector<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
    std::size_t id = 0;
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&, Var self)>;

    /// Leaf that takes no gradient.
    Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

    /// Leaf whose gradient accumulates into the parameter's grad tensor.
    Var param(Parameter<T>& p) {
        nodes_.push_back(Node{{}, {}, {}, true, &p});
        return {nodes_.size() - 1};
    }

    /// Records an operation result. `fn` must add this node's gradient into
    /// its inputs' gradients.
    Var push(Tensor<T> value, bool requires_grad, Backward fn) {
        nodes_.push_back(Node{std::move(value), {}, std::move(fn), requires_grad, nullptr});
        return {nodes_.size() - 1};
    }

    const Tensor<T>& value(Var v) const {
        const auto& n = nodes_.at(v.id);
        return n.param ? n.param->value : n.value;
    }

    const Shape& shape(Var v) const { return value(v).shape(); }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    /// Gradient buffer of v, zero-initialized on first access.
    Tensor<T>& grad(Var v) {
        auto& n = nodes_.at(v.id);
        if (n.param) return n.param->grad;
        if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    bool has_grad(Var v) const {
        const auto& n = nodes_.at(v.id);
        return n.param ? true : !n.grad.empty() || n.value.empty();
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every node that requires a
    /// gradient. Each node's backward runs at most once.
    void backward(Var loss) {
        if (value(loss).size() != 1) throw ShapeError("backward expects a scalar loss");
        grad(loss)[0] = T{1};
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
            n.backward(*this, Var{i});
            ++visited_;
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t backward_visits() const noexcept { return visited_; }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        Backward backward;
        bool requires_grad = false;
        Parameter<T>* param = nullptr;
    };
    std::vector<Node> nodes_;
    std::size_t visited_ = 0;
};

} // namespace mvembed::nn
