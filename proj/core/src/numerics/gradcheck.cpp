#include "objtx/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace objtx::num {

template <typename Real>
GradcheckReport gradcheck(ParamRegistry<Real>& params,
                          const std::function<Var<Real>(Graph<Real>&)>& loss_fn,
                          const GradcheckOptions& options) {
  params.zero_grad();
  {
    Graph<Real> g;
    g.backward(loss_fn(g));
  }

  auto eval = [&]() {
    Graph<Real> g;
    return static_cast<double>(loss_fn(g).value()[0]);
  };

  GradcheckReport report;
  for (auto& p : params) {
    if (!p.trainable) continue;
    const std::size_t n = p.value.numel();
    const std::size_t stride =
        options.max_per_param == 0 ? 1 : std::max<std::size_t>(1, n / options.max_per_param);
    for (std::size_t k = 0; k < n; k += stride) {
      const Real saved = p.value[k];
      p.value[k] = saved + Real(options.step);
      const double up = eval();
      p.value[k] = saved - Real(options.step);
      const double down = eval();
      p.value[k] = saved;

      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = static_cast<double>(p.grad[k]);
      const double denom = std::max({std::abs(numeric), std::abs(analytic), options.abs_floor});
      const double rel = std::abs(numeric - analytic) / denom;
      ++report.checked;
      if (rel > report.max_rel_err || !std::isfinite(rel)) {
        report.max_rel_err = std::isfinite(rel) ? rel : INFINITY;
        report.worst_param = p.name;
        report.worst_index = k;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_err < options.tolerance;
  return report;
}

template GradcheckReport gradcheck(ParamRegistry<double>&,
                                   const std::function<Var<double>(Graph<double>&)>&,
                                   const GradcheckOptions&);

}  // namespace objtx::num
