#include "feddah/tape.hpp"

#include <utility>

#include "feddah/error.hpp"

namespace feddah {

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("value() on an unbound Var");
  return tape_->value(id_);
}

bool Gradients::contains(Var v) const { return v.id() < grads_.size() && grads_[v.id()].has_value(); }

const Tensor& Gradients::operator[](Var v) const {
  if (!contains(v)) throw UsageError("no gradient recorded for untracked node " + std::to_string(v.id()));
  return *grads_[v.id()];
}

Tensor Gradients::take(Var v) {
  if (!contains(v)) throw UsageError("no gradient recorded for untracked node " + std::to_string(v.id()));
  Tensor out = std::move(*grads_[v.id()]);
  grads_[v.id()].reset();
  return out;
}

Var Tape::push_leaf(Tensor owned, const Tensor* view, bool is_param) {
  Node node;
  node.owned = std::move(owned);
  node.view = view;
  node.is_param = is_param;
  node.requires_grad = is_param;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor value) { return push_leaf(std::move(value), nullptr, true); }
Var Tape::param_view(const Tensor& value) { return push_leaf(Tensor{}, &value, true); }
Var Tape::constant(Tensor value) { return push_leaf(std::move(value), nullptr, false); }
Var Tape::constant_view(const Tensor& value) { return push_leaf(Tensor{}, &value, false); }

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape() != this) throw UsageError("operation mixes nodes from different tapes");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const { return nodes_.at(id).value(); }

Tensor& Tape::adjoint(const Tape& tape, Adjoints& adjoints, std::size_t id) {
  Tensor& slot = adjoints[id];
  if (slot.empty() && !tape.nodes_[id].value().empty()) slot = Tensor(tape.nodes_[id].value().shape());
  return slot;
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape() != this) throw UsageError("backward on a node from another tape");
  const Tensor& out = value(loss.id());
  if (out.size() != 1) {
    throw UsageError("backward needs a scalar loss, got shape " + shape_string(out.shape()));
  }

  // Only nodes the loss depends on take part in the sweep.
  std::vector<char> reachable(loss.id() + 1, 0);
  reachable[loss.id()] = 1;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    if (!reachable[i]) continue;
    for (std::size_t in : nodes_[i].inputs) reachable[in] = 1;
  }

  Adjoints adjoints(nodes_.size());
  adjoints[loss.id()] = Tensor::filled(out.shape(), 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!reachable[i] || !node.requires_grad || !node.backward || adjoints[i].empty()) continue;
    node.backward(*this, adjoints[i], adjoints);
  }

  Gradients result;
  result.grads_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].is_param) continue;
    if (i < adjoints.size() && !adjoints[i].empty()) {
      require_finite(adjoints[i], "backward");
      result.grads_[i] = std::move(adjoints[i]);
    } else {
      result.grads_[i] = Tensor(nodes_[i].value().shape());
    }
  }
  return result;
}

}  // namespace feddah
