#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "multitab/numkit/tensor.hpp"

namespace multitab::num {

class Tape;

/// Named parameter values, ordered by name so iteration is deterministic.
using ParamStore = std::map<std::string, Tensor>;
/// Gradient per parameter name, same keys as the ParamStore that fed the tape.
using GradMap = std::map<std::string, Tensor>;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run reverse-mode tape. Build one per forward pass.
class Tape {
 public:
  // Receives the gradient flowing into the node's output.
  using Backward = std::function<void(const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is reported under `name` by backward().
  Var param(const std::string& name, Tensor value);
  /// Leaf for `name` copied out of `store`.
  Var param(const ParamStore& store, const std::string& name);

  /// Records an op output. `backward` is only called when some parent needs a
  /// gradient, and may then query grad_sink() for each parent.
  Var record(Tensor value, const std::vector<Var>& parents, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator of node `v`, allocated on first use; nullptr if the
  /// node does not need a gradient.
  Tensor* grad_sink(const Var& v);

  /// Reverse accumulation from a single-element loss.
  GradMap backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_ready = false;
    bool requires_grad = false;
    std::string param_name;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

}  // namespace multitab::num
