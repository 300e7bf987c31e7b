#ifndef MCINET_AUTOGRAD_HPP
#define MCINET_AUTOGRAD_HPP

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mcinet/tensor.hpp"

namespace mcinet {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<Scalar>& grad_buffer() {
    if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor<Scalar>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && grad.shape() == value.shape(); }
};

/// Handle to a node of the reverse-mode graph. Copies share the node.
template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;
  using BackwardFn = std::function<void(Node<Scalar>&)>;

  Var() = default;

  static Var constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

  static Var leaf(Tensor<Scalar> value, bool requires_grad) {
    Var v;
    v.node_ = std::make_shared<Node<Scalar>>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
  }

  /// Builds an interior node. The backward function is kept only when some
  /// parent requires a gradient; otherwise the result is a constant.
  static Var make(Tensor<Scalar> value, const std::vector<Var>& parents, BackwardFn backward) {
    Var v = leaf(std::move(value), false);
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) v.node_->requires_grad = true;
    }
    if (v.node_->requires_grad) {
      v.node_->parents.reserve(parents.size());
      for (const auto& p : parents) v.node_->parents.push_back(p.node_);
      v.node_->backward = std::move(backward);
    }
    return v;
  }

  bool defined() const { return static_cast<bool>(node_); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor<Scalar>& value() const { return node_->value; }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && node_->has_grad(); }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(Index axis) const { return node_->value.dim(axis); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Runs reverse accumulation from a scalar root (seeded with d root = 1).
template <typename Scalar>
void backward(const Var<Scalar>& root);

/// Named, insertion-ordered parameter tensors.
template <typename Scalar>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> value;
    bool trainable = true;
  };

  void add(std::string name, Tensor<Scalar> value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<Scalar>& value(const std::string& name);
  const Tensor<Scalar>& value(const std::string& name) const;
  const Entry& entry(const std::string& name) const;
  void set_trainable(const std::string& prefix, bool trainable);

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  Index parameter_count() const;

  template <typename Other>
  ParameterStore<Other> cast() const {
    ParameterStore<Other> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<Other>(), e.trainable);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Per-forward-pass view of a parameter store. Each pass gets its own leaf
/// nodes, so gradients of concurrent passes never alias.
template <typename Scalar>
class Binding {
 public:
  /// With track_grads == false no graph is recorded (inference).
  explicit Binding(const ParameterStore<Scalar>& store, bool track_grads = true)
      : store_(&store), track_grads_(track_grads) {}

  Var<Scalar> operator()(const std::string& name);
  bool tracking() const { return track_grads_; }
  const ParameterStore<Scalar>& store() const { return *store_; }

  /// Gradient for every bound trainable parameter (zeros where no path).
  std::vector<std::pair<std::string, Tensor<Scalar>>> gradients() const;
  /// Names bound so far, in binding order.
  const std::vector<std::string>& bound() const { return order_; }

 private:
  const ParameterStore<Scalar>* store_;
  bool track_grads_;
  std::unordered_map<std::string, Var<Scalar>> leaves_;
  std::vector<std::string> order_;
};

}  // namespace mcinet

#endif  // MCINET_AUTOGRAD_HPP
