#include "objtx/numerics/optim.hpp"

#include <cmath>
#include <string>

namespace objtx::num {

template <typename Real>
AdamState<Real>::AdamState(const ParamRegistry<Real>& params, double wd) : weight_decay(wd) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& p : params) {
    m.emplace_back(p.value.shape());
    v.emplace_back(p.value.shape());
  }
}

template <typename Real>
void adam_step(ParamRegistry<Real>& params, AdamState<Real>& state, double lr) {
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state does not match the registry");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const Real b1 = Real(state.beta1), b2 = Real(state.beta2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<Real>& p = params[i];
    if (!p.trainable) continue;
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    if (w.size() != m.size()) throw DimensionError("adam_step: moment shape mismatch for " + p.name);
    const Real decay = p.decay ? Real(lr * state.weight_decay) : Real(0);
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (decay != Real(0)) w[k] -= decay * w[k];
      m[k] = b1 * m[k] + (Real(1) - b1) * g[k];
      v[k] = b2 * v[k] + (Real(1) - b2) * g[k] * g[k];
      const double mhat = double(m[k]) / bc1;
      const double vhat = double(v[k]) / bc2;
      w[k] -= Real(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

double lr_schedule(std::uint64_t step, std::uint64_t total_steps, double base_lr,
                   double warmup_frac) {
  if (step > total_steps) {
    throw UsageError("lr_schedule: step " + std::to_string(step) + " exceeds total " +
                     std::to_string(total_steps));
  }
  if (total_steps == 0) return base_lr;
  const double s = static_cast<double>(step);
  const double total = static_cast<double>(total_steps);
  const double warmup = warmup_frac * total;
  if (warmup > 0.0 && s <= warmup) return base_lr * s / warmup;
  if (total <= warmup) return base_lr;
  return base_lr * (total - s) / (total - warmup);
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParamRegistry<float>&, AdamState<float>&, double);
template void adam_step(ParamRegistry<double>&, AdamState<double>&, double);

}  // namespace objtx::num
