#pragma once

#include <cstdint>
#include <vector>

#include "objtx/numerics/graph.hpp"

namespace objtx::num {

/// Adam moments for every registry entry, indexed like the registry.
template <typename Real>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  AdamState() = default;
  explicit AdamState(const ParamRegistry<Real>& params, double weight_decay = 0.01);
};

/// One bias-corrected Adam update over every trainable parameter.
///
/// Weight decay is decoupled: parameters flagged `decay` first shrink by
/// lr * weight_decay * p, then take the moment-based step. Frozen parameters
/// are skipped but the step counter still advances by one.
template <typename Real>
void adam_step(ParamRegistry<Real>& params, AdamState<Real>& state, double lr);

/// Linear warm-up from 0 to base_lr over the first warmup_frac of the
/// schedule, then linear decay to 0 at total_steps.
double lr_schedule(std::uint64_t step, std::uint64_t total_steps, double base_lr,
                   double warmup_frac = 0.1);

extern template struct AdamState<float>;
extern template struct AdamState<double>;

}  // namespace objtx::num
