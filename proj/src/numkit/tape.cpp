#include "multitab/numkit/tape.hpp"

#include "multitab/numkit/error.hpp"

namespace multitab::num {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, false, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const std::string& name, Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, true, name, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  auto it = store.find(name);
  if (it == store.end()) throw ContractError("unknown parameter '" + name + "'");
  return param(name, it->second);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (&p.tape() != this) throw ContractError("op mixes vars from different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, false, needs, {}, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_sink(const Var& v) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return nullptr;
  if (!node.grad_ready) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.grad_ready = true;
  }
  return &node.grad;
}

GradMap Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) throw ContractError("backward: loss must be a scalar, got shape " + shape_str(lv.shape()));

  for (auto& n : nodes_) {
    n.grad = Tensor{};
    n.grad_ready = false;
  }
  GradMap grads;
  if (!nodes_[loss.id()].requires_grad) return grads;

  Tensor* seed = grad_sink(loss);
  (*seed)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.grad_ready) continue;
    if (node.backward) node.backward(node.grad);
    if (!node.param_name.empty()) {
      auto [it, inserted] = grads.try_emplace(node.param_name, node.grad);
      if (!inserted) {
        auto dst = it->second.data();
        auto src = node.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }
  // Parameters the loss never touched still get an explicit zero gradient.
  for (const auto& n : nodes_) {
    if (!n.param_name.empty() && !grads.count(n.param_name)) grads.emplace(n.param_name, Tensor(n.value.shape(), 0.0));
  }
  return grads;
}

}  // namespace multitab::num
