#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "clsr/tensor.hpp"

namespace clsr {

/// One value in a dynamically recorded computation graph.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  /// Pushes this->grad into the parents' grads.
  std::function<void(Node&)> backward;

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value) {
    Var v;
    v.node_ = std::make_shared<Node<T>>();
    v.node_->value = std::move(value);
    return v;
  }
  static Var parameter(Tensor<T> value) {
    Var v = constant(std::move(value));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. The backward closure and parent links are kept only
/// when at least one parent needs a gradient.
template <class T>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  Var<T> out = Var<T>::constant(std::move(value));
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    auto& n = *out.node();
    n.requires_grad = true;
    for (const auto& p : parents) n.parents.push_back(p.node());
    n.backward = std::move(backward);
  }
  return out;
}

template <class T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& parents,
                   std::function<void(Node<T>&)> backward) {
  Var<T> out = Var<T>::constant(std::move(value));
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    auto& n = *out.node();
    n.requires_grad = true;
    for (const auto& p : parents) n.parents.push_back(p.node());
    n.backward = std::move(backward);
  }
  return out;
}

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// reachable node that requires them; intermediate links are released.
template <class T>
void backward(const Var<T>& root);

}  // namespace clsr
