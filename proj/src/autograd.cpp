#include "mcinet/autograd.hpp"

#include <unordered_set>

namespace mcinet {

template <typename Scalar>
void backward(const Var<Scalar>& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw ShapeError("backward() needs a scalar root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  using NodePtr = std::shared_ptr<Node<Scalar>>;
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const NodePtr& p = node->parents[next++];
      if (p && p->requires_grad && visited.insert(p.get()).second) stack.emplace_back(p.get(), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().data().setConstant(Scalar(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
}

template <typename Scalar>
void ParameterStore<Scalar>::add(std::string name, Tensor<Scalar> value, bool trainable) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
}

template <typename Scalar>
Tensor<Scalar>& ParameterStore<Scalar>::value(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].value;
}

template <typename Scalar>
const Tensor<Scalar>& ParameterStore<Scalar>::value(const std::string& name) const {
  return entry(name).value;
}

template <typename Scalar>
const typename ParameterStore<Scalar>::Entry& ParameterStore<Scalar>::entry(
    const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second];
}

template <typename Scalar>
void ParameterStore<Scalar>::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& e : entries_) {
    if (e.name.rfind(prefix, 0) == 0) e.trainable = trainable;
  }
}

template <typename Scalar>
Index ParameterStore<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename Scalar>
Var<Scalar> Binding<Scalar>::operator()(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  const auto& e = store_->entry(name);
  auto leaf = Var<Scalar>::leaf(e.value, track_grads_ && e.trainable);
  leaves_.emplace(name, leaf);
  order_.push_back(name);
  return leaf;
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>>> Binding<Scalar>::gradients() const {
  std::vector<std::pair<std::string, Tensor<Scalar>>> out;
  for (const auto& name : order_) {
    const auto& leaf = leaves_.at(name);
    if (!leaf.requires_grad()) continue;
    out.emplace_back(name, leaf.has_grad() ? leaf.grad() : Tensor<Scalar>(leaf.shape()));
  }
  return out;
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
template class ParameterStore<float>;
template class ParameterStore<double>;
template class Binding<float>;
template class Binding<double>;

}  // namespace mcinet
