#include "objtx/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <limits>
#include <numbers>

namespace objtx::num {
namespace {

template <typename Real>
Graph<Real>& same_graph(Var<Real> a, Var<Real> b) {
  if (a.graph != b.graph || a.graph == nullptr) {
    throw UsageError("operands belong to different graphs");
  }
  return *a.graph;
}

template <typename Real>
Shape matrix_shape(const Shape& like, std::size_t rows, std::size_t cols) {
  if (like.rank() == 1 && rows == 1) return Shape{cols};
  return Shape{rows, cols};
}

void check_matrix(const Shape& s, const char* op) {
  if (s.rank() == 3) throw DimensionError(std::string(op) + " expects a rank-1 or rank-2 operand");
}

// c[m x n] += a[m x k] * b[k x n]
template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* ci = c + i * n;
    const Real* ai = a + i * k;
    for (std::size_t l = 0; l < k; ++l) {
      const Real av = ai[l];
      if (av == Real(0)) continue;
      const Real* bl = b + l * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* bj = b + j * k;
      Real s = 0;
      for (std::size_t l = 0; l < k; ++l) s += ai[l] * bj[l];
      c[i * n + j] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* ai = a + i * k;
    const Real* bi = b + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const Real av = ai[l];
      if (av == Real(0)) continue;
      Real* cl = c + l * n;
      for (std::size_t j = 0; j < n; ++j) cl[j] += av * bi[j];
    }
  }
}

template <typename Real>
void softmax_row(const Real* x, Real* y, std::size_t n, const std::uint8_t* keep) {
  Real mx = -std::numeric_limits<Real>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (!keep || keep[j]) mx = std::max(mx, x[j]);
  }
  Real total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (keep && !keep[j]) {
      y[j] = 0;
      continue;
    }
    y[j] = std::exp(x[j] - mx);
    total += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= total;
}

template <typename Real>
Var<Real> softmax_impl(Var<Real> x, const std::uint8_t* keep) {
  Graph<Real>& g = *x.graph;
  const Tensor<Real>& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<Real> y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row(&xv.data()[r * cols], &y.data()[r * cols], cols, keep);
  }
  return g.record(std::move(y), {x.id}, [xi = x.id, rows, cols](Graph<Real>& gr, std::size_t self) {
    const Tensor<Real>& yv = gr.value(self);
    const Tensor<Real>& gy = gr.grad(self);
    Tensor<Real>& gx = gr.grad(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += gy(r, c) * yv(r, c);
      for (std::size_t c = 0; c < cols; ++c) gx(r, c) += yv(r, c) * (gy(r, c) - dot);
    }
  });
}

}  // namespace

namespace kernel {

template <typename Real>
Real gelu(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x / std::numbers::sqrt2_v<Real>));
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x) {
  Tensor<Real> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    softmax_row(&x.data()[r * x.cols()], &y.data()[r * x.cols()], x.cols(),
                static_cast<const std::uint8_t*>(nullptr));
  }
  return y;
}

}  // namespace kernel

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  Graph<Real>& g = same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  check_matrix(av.shape(), "matmul");
  if (bv.rank() != 2) throw DimensionError("matmul: right operand must be rank 2");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + av.shape().str() + " x " +
                         bv.shape().str());
  }
  Tensor<Real> c(matrix_shape<Real>(av.shape(), m, n));
  gemm_nn(av.data().data(), bv.data().data(), c.data().data(), m, k, n);
  return g.record(std::move(c), {a.id, b.id},
                  [ai = a.id, bi = b.id, m, k, n](Graph<Real>& gr, std::size_t self) {
                    const Real* gc = gr.grad(self).data().data();
                    if (gr.needs_grad(ai)) {
                      gemm_nt(gc, gr.value(bi).data().data(), gr.grad(ai).data().data(), m, n, k);
                    }
                    if (gr.needs_grad(bi)) {
                      gemm_tn(gr.value(ai).data().data(), gc, gr.grad(bi).data().data(), m, k, n);
                    }
                  });
}

template <typename Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b) {
  Graph<Real>& g = same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  check_matrix(av.shape(), "matmul_nt");
  check_matrix(bv.shape(), "matmul_nt");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " + av.shape().str() + " x " +
                         bv.shape().str() + "^T");
  }
  Tensor<Real> c(matrix_shape<Real>(av.shape(), m, n));
  gemm_nt(av.data().data(), bv.data().data(), c.data().data(), m, k, n);
  return g.record(std::move(c), {a.id, b.id},
                  [ai = a.id, bi = b.id, m, k, n](Graph<Real>& gr, std::size_t self) {
                    const Real* gc = gr.grad(self).data().data();
                    if (gr.needs_grad(ai)) {
                      gemm_nn(gc, gr.value(bi).data().data(), gr.grad(ai).data().data(), m, n, k);
                    }
                    if (gr.needs_grad(bi)) {
                      gemm_tn(gc, gr.value(ai).data().data(), gr.grad(bi).data().data(), m, n, k);
                    }
                  });
}

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  Graph<Real>& g = same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool broadcast = !same && bv.rows() == 1 && bv.cols() == av.cols();
  if (!same && !broadcast) {
    throw DimensionError("add: shapes " + av.shape().str() + " and " + bv.shape().str());
  }
  Tensor<Real> c = av;
  c.set_requires_grad(false);
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] += same ? bv[i] : bv[i % cols];
  return g.record(std::move(c), {a.id, b.id},
                  [ai = a.id, bi = b.id, same, cols](Graph<Real>& gr, std::size_t self) {
                    const auto& gc = gr.grad(self);
                    if (gr.needs_grad(ai)) {
                      auto& ga = gr.grad(ai);
                      for (std::size_t i = 0; i < gc.numel(); ++i) ga[i] += gc[i];
                    }
                    if (gr.needs_grad(bi)) {
                      auto& gb = gr.grad(bi);
                      for (std::size_t i = 0; i < gc.numel(); ++i) gb[same ? i : i % cols] += gc[i];
                    }
                  });
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  Graph<Real>& g = same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (!(av.shape() == bv.shape())) {
    throw DimensionError("sub: shapes " + av.shape().str() + " and " + bv.shape().str());
  }
  Tensor<Real> c(av.shape());
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] = av[i] - bv[i];
  return g.record(std::move(c), {a.id, b.id}, [ai = a.id, bi = b.id](Graph<Real>& gr, std::size_t self) {
    const auto& gc = gr.grad(self);
    if (gr.needs_grad(ai)) {
      auto& ga = gr.grad(ai);
      for (std::size_t i = 0; i < gc.numel(); ++i) ga[i] += gc[i];
    }
    if (gr.needs_grad(bi)) {
      auto& gb = gr.grad(bi);
      for (std::size_t i = 0; i < gc.numel(); ++i) gb[i] -= gc[i];
    }
  });
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  Graph<Real>& g = same_graph(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (!(av.shape() == bv.shape())) {
    throw DimensionError("mul: shapes " + av.shape().str() + " and " + bv.shape().str());
  }
  Tensor<Real> c(av.shape());
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] = av[i] * bv[i];
  return g.record(std::move(c), {a.id, b.id}, [ai = a.id, bi = b.id](Graph<Real>& gr, std::size_t self) {
    const auto& gc = gr.grad(self);
    if (gr.needs_grad(ai)) {
      auto& ga = gr.grad(ai);
      const auto& bv = gr.value(bi);
      for (std::size_t i = 0; i < gc.numel(); ++i) ga[i] += gc[i] * bv[i];
    }
    if (gr.needs_grad(bi)) {
      auto& gb = gr.grad(bi);
      const auto& av = gr.value(ai);
      for (std::size_t i = 0; i < gc.numel(); ++i) gb[i] += gc[i] * av[i];
    }
  });
}

template <typename Real>
Var<Real> scale(Var<Real> a, Real s) {
  Tensor<Real> c(a.value().shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] = av[i] * s;
  return a.graph->record(std::move(c), {a.id}, [ai = a.id, s](Graph<Real>& gr, std::size_t self) {
    const auto& gc = gr.grad(self);
    auto& ga = gr.grad(ai);
    for (std::size_t i = 0; i < gc.numel(); ++i) ga[i] += gc[i] * s;
  });
}

template <typename Real>
Var<Real> gelu(Var<Real> x) {
  const auto& xv = x.value();
  Tensor<Real> y(xv.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = kernel::gelu(xv[i]);
  return x.graph->record(std::move(y), {x.id}, [xi = x.id](Graph<Real>& gr, std::size_t self) {
    const auto& gy = gr.grad(self);
    const auto& xv = gr.value(xi);
    auto& gx = gr.grad(xi);
    const Real inv_sqrt2pi = Real(1) / std::sqrt(Real(2) * std::numbers::pi_v<Real>);
    for (std::size_t i = 0; i < gy.numel(); ++i) {
      const Real v = xv[i];
      const Real cdf = Real(0.5) * (Real(1) + std::erf(v / std::numbers::sqrt2_v<Real>));
      const Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * v * v);
      gx[i] += gy[i] * (cdf + v * pdf);
    }
  });
}

template <typename Real>
Var<Real> log_clamped(Var<Real> x, Real floor) {
  const auto& xv = x.value();
  Tensor<Real> y(xv.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = std::log(std::max(xv[i], floor));
  return x.graph->record(std::move(y), {x.id}, [xi = x.id, floor](Graph<Real>& gr, std::size_t self) {
    const auto& gy = gr.grad(self);
    const auto& xv = gr.value(xi);
    auto& gx = gr.grad(xi);
    for (std::size_t i = 0; i < gy.numel(); ++i) {
      if (xv[i] > floor) gx[i] += gy[i] / xv[i];
    }
  });
}

template <typename Real>
Var<Real> softmax(Var<Real> x) {
  return softmax_impl(x, nullptr);
}

template <typename Real>
Var<Real> masked_softmax(Var<Real> x, std::span<const std::uint8_t> key_mask) {
  if (key_mask.size() != x.cols()) {
    throw DimensionError("masked_softmax: mask has " + std::to_string(key_mask.size()) +
                         " entries for " + std::to_string(x.cols()) + " columns");
  }
  if (std::none_of(key_mask.begin(), key_mask.end(), [](std::uint8_t k) { return k != 0; })) {
    throw UsageError("attention: every key is masked");
  }
  return softmax_impl(x, key_mask.data());
}

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Real eps) {
  Graph<Real>& g = same_graph(x, gamma);
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (d < 2) throw DimensionError("layer_norm needs at least 2 features");
  if (gamma.value().numel() != d || beta.value().numel() != d) {
    throw DimensionError("layer_norm: gamma/beta size must equal feature count");
  }
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  Tensor<Real> y(xv.shape());
  // Cache normalized inputs and inverse std for backward.
  auto xhat = std::make_shared<std::vector<Real>>(xv.numel());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    Real mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += xv(r, c);
    mu /= Real(d);
    Real var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xv(r, c) - mu) * (xv(r, c) - mu);
    var /= Real(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const Real h = (xv(r, c) - mu) * is;
      (*xhat)[r * d + c] = h;
      y(r, c) = h * gv[c] + bv[c];
    }
  }
  return g.record(
      std::move(y), {x.id, gamma.id, beta.id},
      [xi = x.id, gi = gamma.id, bi = beta.id, rows, d, xhat, inv_std](Graph<Real>& gr,
                                                                      std::size_t self) {
        const auto& gy = gr.grad(self);
        const auto& gv = gr.value(gi);
        if (gr.needs_grad(gi)) {
          auto& gg = gr.grad(gi);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gg[c] += gy(r, c) * (*xhat)[r * d + c];
        }
        if (gr.needs_grad(bi)) {
          auto& gb = gr.grad(bi);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += gy(r, c);
        }
        if (gr.needs_grad(xi)) {
          auto& gx = gr.grad(xi);
          for (std::size_t r = 0; r < rows; ++r) {
            Real mean_dh = 0, mean_dh_h = 0;
            for (std::size_t c = 0; c < d; ++c) {
              const Real dh = gy(r, c) * gv[c];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[r * d + c];
            }
            mean_dh /= Real(d);
            mean_dh_h /= Real(d);
            for (std::size_t c = 0; c < d; ++c) {
              const Real dh = gy(r, c) * gv[c];
              gx(r, c) += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + c] * mean_dh_h);
            }
          }
        }
      });
}

template <typename Real>
Var<Real> dropout(Var<Real> x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kEval || rate == 0.0) return x;
  const auto& xv = x.value();
  auto keep = std::make_shared<std::vector<Real>>(xv.numel());
  const Real scale_kept = Real(1.0 / (1.0 - rate));
  Tensor<Real> y(xv.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    (*keep)[i] = uniform01(rng) >= rate ? scale_kept : Real(0);
    y[i] = xv[i] * (*keep)[i];
  }
  return x.graph->record(std::move(y), {x.id}, [xi = x.id, keep](Graph<Real>& gr, std::size_t self) {
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xi);
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * (*keep)[i];
  });
}

template <typename Real>
Var<Real> select_rows(Var<Real> table, std::span<const std::size_t> rows) {
  const auto& tv = table.value();
  const std::size_t cols = tv.cols(), n_rows = tv.rows();
  if (rows.empty()) throw DimensionError("select_rows: empty row list");
  Tensor<Real> y(Shape{rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n_rows) throw DimensionError("select_rows: row index out of range");
    std::copy_n(&tv.data()[rows[i] * cols], cols, &y.data()[i * cols]);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return table.graph->record(
      std::move(y), {table.id}, [ti = table.id, idx = std::move(idx), cols](Graph<Real>& gr, std::size_t self) {
        const auto& gy = gr.grad(self);
        auto& gt = gr.grad(ti);
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t c = 0; c < cols; ++c) gt[idx[i] * cols + c] += gy[i * cols + c];
      });
}

template <typename Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  Graph<Real>& g = *parts[0].graph;
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    if (p.graph != &g) throw UsageError("concat_rows: operands belong to different graphs");
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
    ids.push_back(p.id);
  }
  Tensor<Real> y(Shape{rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    std::copy(v.data().begin(), v.data().end(), y.data().begin() + off);
    off += v.numel();
  }
  return g.record(std::move(y), ids, [ids](Graph<Real>& gr, std::size_t self) {
    const auto& gy = gr.grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t n = gr.value(id).numel();
      if (gr.needs_grad(id)) {
        auto& gp = gr.grad(id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += gy[off + i];
      }
      off += n;
    }
  });
}

template <typename Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  Graph<Real>& g = *parts[0].graph;
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    if (p.graph != &g) throw UsageError("concat_cols: operands belong to different graphs");
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    ids.push_back(p.id);
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Tensor<Real> y(Shape{rows, cols});
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(&v.data()[r * v.cols()], v.cols(), &y.data()[r * cols + c0]);
    c0 += v.cols();
  }
  return g.record(std::move(y), ids, [ids, widths, rows, cols](Graph<Real>& gr, std::size_t self) {
    const auto& gy = gr.grad(self);
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.needs_grad(ids[k])) {
        auto& gp = gr.grad(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += gy[r * cols + c0 + c];
      }
      c0 += widths[k];
    }
  });
}

template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t start, std::size_t count) {
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (count == 0 || start + count > cols) throw DimensionError("slice_cols: range out of bounds");
  Tensor<Real> y(Shape{rows, count});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(&xv.data()[r * cols + start], count, &y.data()[r * count]);
  return x.graph->record(std::move(y), {x.id},
                         [xi = x.id, rows, cols, start, count](Graph<Real>& gr, std::size_t self) {
                           const auto& gy = gr.grad(self);
                           auto& gx = gr.grad(xi);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < count; ++c)
                               gx[r * cols + start + c] += gy[r * count + c];
                         });
}

template <typename Real>
Var<Real> sum(Var<Real> x) {
  Real s = 0;
  for (Real v : x.value().data()) s += v;
  Tensor<Real> y(Shape{1}, std::vector<Real>{s});
  return x.graph->record(std::move(y), {x.id}, [xi = x.id](Graph<Real>& gr, std::size_t self) {
    const Real gs = gr.grad(self)[0];
    auto& gx = gr.grad(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gs;
  });
}

template <typename Real>
Var<Real> mean(Var<Real> x) {
  return scale(sum(x), Real(1) / Real(x.value().numel()));
}

template <typename Real>
Var<Real> mean_rows(Var<Real> x) {
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<Real> y(Shape{1, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[c] += xv(r, c);
  for (std::size_t c = 0; c < cols; ++c) y[c] /= Real(rows);
  return x.graph->record(std::move(y), {x.id}, [xi = x.id, rows, cols](Graph<Real>& gr, std::size_t self) {
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xi);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx(r, c) += gy[c] / Real(rows);
  });
}

template <typename Real>
Var<Real> max_rows(Var<Real> x) {
  const auto& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<Real> y(Shape{1, cols});
  std::vector<std::size_t> arg(cols, 0);
  for (std::size_t c = 0; c < cols; ++c) {
    y[c] = xv(0, c);
    for (std::size_t r = 1; r < rows; ++r) {
      if (xv(r, c) > y[c]) {
        y[c] = xv(r, c);
        arg[c] = r;
      }
    }
  }
  return x.graph->record(std::move(y), {x.id}, [xi = x.id, arg = std::move(arg), cols](Graph<Real>& gr, std::size_t self) {
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xi);
    for (std::size_t c = 0; c < cols; ++c) gx(arg[c], c) += gy[c];
  });
}

template <typename Real>
Var<Real> cross_entropy_logits(Var<Real> logits, std::span<const std::size_t> targets,
                               std::span<const std::uint8_t> valid) {
  const auto& lv = logits.value();
  const std::size_t rows = lv.rows(), cols = lv.cols();
  if (targets.size() != rows) throw DimensionError("cross_entropy_logits: one target per row");
  if (!valid.empty() && valid.size() != lv.numel()) {
    throw DimensionError("cross_entropy_logits: validity mask size mismatch");
  }
  auto probs = std::make_shared<Tensor<Real>>(lv.shape());
  Real loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= cols) throw DimensionError("cross_entropy_logits: target out of range");
    const std::uint8_t* keep = valid.empty() ? nullptr : valid.data() + r * cols;
    if (keep && !keep[targets[r]]) throw UsageError("cross_entropy_logits: target entry is masked");
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (!keep || keep[c]) mx = std::max(mx, lv(r, c));
    Real total = 0;
    for (std::size_t c = 0; c < cols; ++c)
      if (!keep || keep[c]) total += std::exp(lv(r, c) - mx);
    const Real lse = mx + std::log(total);
    loss += lse - lv(r, targets[r]);
    for (std::size_t c = 0; c < cols; ++c)
      (*probs)(r, c) = (!keep || keep[c]) ? std::exp(lv(r, c) - lse) : Real(0);
  }
  Tensor<Real> y(Shape{1}, std::vector<Real>{loss / Real(rows)});
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return logits.graph->record(
      std::move(y), {logits.id},
      [li = logits.id, probs, tgt = std::move(tgt), rows, cols](Graph<Real>& gr, std::size_t self) {
        const Real gs = gr.grad(self)[0] / Real(rows);
        auto& gl = gr.grad(li);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) gl(r, c) += gs * (*probs)(r, c);
          gl(r, tgt[r]) -= gs;
        }
      });
}

template <typename Real>
Var<Real> bce_logits(Var<Real> logits, const Tensor<Real>& targets) {
  const auto& lv = logits.value();
  if (lv.numel() != targets.numel()) throw DimensionError("bce_logits: size mismatch");
  Real loss = 0;
  for (std::size_t i = 0; i < lv.numel(); ++i) {
    const Real x = lv[i];
    loss += std::max(x, Real(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const std::size_t n = lv.numel();
  Tensor<Real> y(Shape{1}, std::vector<Real>{loss / Real(n)});
  return logits.graph->record(std::move(y), {logits.id},
                              [li = logits.id, targets, n](Graph<Real>& gr, std::size_t self) {
                                const Real gs = gr.grad(self)[0] / Real(n);
                                const auto& lv = gr.value(li);
                                auto& gl = gr.grad(li);
                                for (std::size_t i = 0; i < n; ++i) {
                                  const Real s = Real(1) / (Real(1) + std::exp(-lv[i]));
                                  gl[i] += gs * (s - targets[i]);
                                }
                              });
}

template <typename Real>
Var<Real> mse(Var<Real> pred, const Tensor<Real>& targets) {
  const auto& pv = pred.value();
  if (pv.numel() != targets.numel()) throw DimensionError("mse: size mismatch");
  const std::size_t n = pv.numel();
  Real loss = 0;
  for (std::size_t i = 0; i < n; ++i) loss += (pv[i] - targets[i]) * (pv[i] - targets[i]);
  Tensor<Real> y(Shape{1}, std::vector<Real>{loss / Real(n)});
  return pred.graph->record(std::move(y), {pred.id}, [pi = pred.id, targets, n](Graph<Real>& gr, std::size_t self) {
    const Real gs = gr.grad(self)[0] / Real(n);
    const auto& pv = gr.value(pi);
    auto& gp = gr.grad(pi);
    for (std::size_t i = 0; i < n; ++i) gp[i] += gs * Real(2) * (pv[i] - targets[i]);
  });
}

#define OBJTX_INSTANTIATE_OPS(R)                                                           \
  template Var<R> matmul(Var<R>, Var<R>);                                                  \
  template Var<R> matmul_nt(Var<R>, Var<R>);                                               \
  template Var<R> add(Var<R>, Var<R>);                                                     \
  template Var<R> sub(Var<R>, Var<R>);                                                     \
  template Var<R> mul(Var<R>, Var<R>);                                                     \
  template Var<R> scale(Var<R>, R);                                                        \
  template Var<R> gelu(Var<R>);                                                            \
  template Var<R> log_clamped(Var<R>, R);                                                  \
  template Var<R> softmax(Var<R>);                                                         \
  template Var<R> masked_softmax(Var<R>, std::span<const std::uint8_t>);                           \
  template Var<R> layer_norm(Var<R>, Var<R>, Var<R>, R);                                   \
  template Var<R> dropout(Var<R>, double, Mode, Rng&);                                     \
  template Var<R> select_rows(Var<R>, std::span<const std::size_t>);                       \
  template Var<R> concat_rows(std::span<const Var<R>>);                                    \
  template Var<R> concat_cols(std::span<const Var<R>>);                                    \
  template Var<R> slice_cols(Var<R>, std::size_t, std::size_t);                            \
  template Var<R> sum(Var<R>);                                                             \
  template Var<R> mean(Var<R>);                                                            \
  template Var<R> mean_rows(Var<R>);                                                       \
  template Var<R> max_rows(Var<R>);                                                        \
  template Var<R> cross_entropy_logits(Var<R>, std::span<const std::size_t>,               \
                                       std::span<const std::uint8_t>);                             \
  template Var<R> bce_logits(Var<R>, const Tensor<R>&);                                    \
  template Var<R> mse(Var<R>, const Tensor<R>&);                                           \
  template R kernel::gelu(R);                                                              \
  template Tensor<R> kernel::softmax(const Tensor<R>&);

OBJTX_INSTANTIATE_OPS(float)
OBJTX_INSTANTIATE_OPS(double)

#undef OBJTX_INSTANTIATE_OPS

}  // namespace objtx::num
