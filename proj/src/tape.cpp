#include <algorithm>
#include <string>

#include "vqtts/autograd.hpp"

namespace vqtts {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(*this);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  return push(std::move(node));
}

Var Tape::leaf(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = grad_enabled_;
  return push(std::move(node));
}

Var Tape::param(const Tensor& parameter) {
  if (auto it = bound_.find(&parameter); it != bound_.end()) return Var(this, it->second);
  Var v = leaf(parameter);
  bound_.emplace(&parameter, v.id());
  return v;
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op + " with shape " +
                       shape_str(value.shape()));
  }
  Node node;
  node.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw std::logic_error(std::string(op) + ": input from another tape");
      if (nodes_[in.id()].requires_grad) node.requires_grad = true;
    }
  }
  if (node.requires_grad) {
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) node.inputs.push_back(in.id());
    node.backward = std::move(backward);
  }
  return push(std::move(node));
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw std::logic_error("backward: loss belongs to another tape");
  if (backward_done_) throw std::logic_error("backward: tape already consumed");
  Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  backward_done_ = true;
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0);
  root.has_grad = true;

  BackwardContext ctx;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.has_grad || !node.backward) continue;
    ctx.out_grad_ = &node.grad;
    ctx.output_ = &node.value;
    ctx.inputs_.clear();
    ctx.input_grads_.clear();
    for (std::size_t in : node.inputs) {
      Node& src = nodes_[in];
      ctx.inputs_.push_back(&src.value);
      if (src.requires_grad) {
        if (!src.has_grad) {
          src.grad = Tensor(src.value.shape(), 0.0);
          src.has_grad = true;
        }
        ctx.input_grads_.push_back(&src.grad);
      } else {
        ctx.input_grads_.push_back(nullptr);
      }
    }
    node.backward(ctx);
    node.backward = nullptr;
  }
}

Tensor Tape::grad(Var v) const {
  if (!backward_done_) throw std::logic_error("grad requested before backward");
  const Node& node = nodes_[v.id()];
  if (!node.has_grad) return Tensor(node.value.shape(), 0.0);
  return node.grad;
}

Tensor Tape::grad_of(const Tensor& parameter) const {
  if (!backward_done_) throw std::logic_error("grad requested before backward");
  auto it = bound_.find(&parameter);
  if (it == bound_.end() || !nodes_[it->second].has_grad) return Tensor(parameter.shape(), 0.0);
  return nodes_[it->second].grad;
}

}  // namespace vqtts
