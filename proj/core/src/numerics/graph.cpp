#include "objtx/numerics/graph.hpp"

namespace objtx::num {

template <typename Real>
std::size_t ParamRegistry<Real>::add(std::string name, Shape shape, bool decay) {
  if (find(name) != nullptr) throw UsageError("parameter registered twice: " + name);
  Parameter<Real> p;
  p.name = std::move(name);
  p.value = Tensor<Real>(shape);
  p.grad = Tensor<Real>(shape);
  p.decay = decay;
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename Real>
const Parameter<Real>* ParamRegistry<Real>::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename Real>
Parameter<Real>* ParamRegistry<Real>::find(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename Real>
std::size_t ParamRegistry<Real>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw UsageError("unknown parameter: " + std::string(name));
}

template <typename Real>
void ParamRegistry<Real>::zero_grad() {
  for (auto& p : params_) p.grad.fill(Real(0));
}

template <typename Real>
void ParamRegistry<Real>::set_all_trainable(bool on) {
  for (auto& p : params_) p.trainable = on;
}

template <typename Real>
std::size_t ParamRegistry<Real>::total_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename Real>
Var<Real> Graph<Real>::constant(Tensor<Real> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename Real>
Var<Real> Graph<Real>::param(Parameter<Real>& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = p.trainable;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename Real>
Var<Real> Graph<Real>::record(Tensor<Real> value, std::vector<std::size_t> inputs,
                              BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw UsageError("graph input refers to a later node");
    n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
  }
  n.inputs = std::move(inputs);
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename Real>
Tensor<Real>& Graph<Real>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<Real>(n.value.shape());
  return n.grad;
}

template <typename Real>
void Graph<Real>::backward(Var<Real> loss) {
  if (loss.graph != this) throw UsageError("loss belongs to another graph");
  if (nodes_[loss.id].value.numel() != 1) {
    throw UsageError("backward needs a scalar loss, got shape " +
                     nodes_[loss.id].value.shape().str());
  }
  visits_ = 0;
  grad(loss.id)[0] = Real(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    ++visits_;
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

template class ParamRegistry<float>;
template class ParamRegistry<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace objtx::num
