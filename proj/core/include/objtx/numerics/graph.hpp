#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "objtx/numerics/tensor.hpp"

namespace objtx::num {

/// One learnable tensor plus its accumulated gradient.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  bool decay = true;      // decoupled weight decay applies
  bool trainable = true;  // frozen parameters receive no gradient and no update
};

/// Flat, ordered parameter store. Registration order is the checkpoint order
/// and never changes after construction; the registry is a value type so a
/// whole model can be copied for independent fine-tuning runs.
template <typename Real>
class ParamRegistry {
 public:
  std::size_t add(std::string name, Shape shape, bool decay);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<Real>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return params_[i]; }

  const Parameter<Real>* find(std::string_view name) const;
  Parameter<Real>* find(std::string_view name);
  std::size_t index_of(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  void set_all_trainable(bool on);
  std::size_t total_scalars() const;

 private:
  std::vector<Parameter<Real>> params_;
};

template <typename Real>
class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
template <typename Real>
struct Var {
  Graph<Real>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Tape for reverse-mode differentiation. Nodes are appended in execution
/// order, so the tape is topologically sorted by construction; backward()
/// walks it once in reverse.
template <typename Real>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Real> constant(Tensor<Real> value);
  /// Leaf bound to a registry entry; backward() accumulates into param.grad.
  Var<Real> param(Parameter<Real>& p);
  Var<Real> record(Tensor<Real> value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor<Real>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<Real>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t backward_visits() const noexcept { return visits_; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every leaf. The loss must
  /// hold exactly one scalar.
  void backward(Var<Real> loss);

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<Real>* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

template <typename Real>
const Tensor<Real>& Var<Real>::value() const {
  return graph->value(id);
}

extern template class ParamRegistry<float>;
extern template class ParamRegistry<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace objtx::num
