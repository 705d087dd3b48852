#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "objtx/numerics/graph.hpp"

namespace objtx::num {

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error so that gradients that are
  // zero up to rounding do not produce spurious failures.
  double abs_floor = 1e-6;
  // 0 checks every element; otherwise at most this many per parameter,
  // spread evenly over the buffer.
  std::size_t max_per_param = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences on every trainable parameter of `params`. `loss_fn` must be a
/// deterministic function of the parameter values (reseed any dropout RNG
/// inside it).
template <typename Real>
GradcheckReport gradcheck(ParamRegistry<Real>& params,
                          const std::function<Var<Real>(Graph<Real>&)>& loss_fn,
                          const GradcheckOptions& options = {});

extern template GradcheckReport gradcheck(ParamRegistry<double>&,
                                          const std::function<Var<double>(Graph<double>&)>&,
                                          const GradcheckOptions&);

}  // namespace objtx::num
