#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "objtx/numerics/graph.hpp"
#include "objtx/numerics/rng.hpp"

namespace objtx::num {

enum class Mode { kTrain, kEval };

// Differentiable operations. Every op reads its inputs' values, appends one
// node to the inputs' graph and returns the handle. 2-D semantics follow
// Shape::rows()/cols(): a rank-1 [n] operand is a single row.

/// a[m x k] * b[k x n]
template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b);

/// a[m x k] * b[n x k]^T
template <typename Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b);

/// Elementwise sum. `b` may also be a single row broadcast over a's rows.
template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b);

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b);

/// Elementwise product of equal shapes.
template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b);

template <typename Real>
Var<Real> scale(Var<Real> a, Real s);

/// x * Phi(x) with the exact erf form.
template <typename Real>
Var<Real> gelu(Var<Real> x);

/// log(max(x, floor)); zero gradient where the floor is active.
template <typename Real>
Var<Real> log_clamped(Var<Real> x, Real floor);

/// Softmax over the last axis, max-subtracted.
template <typename Real>
Var<Real> softmax(Var<Real> x);

/// Row softmax where columns with key_mask[c] == false get probability 0.
/// Throws UsageError if every column is masked.
template <typename Real>
Var<Real> masked_softmax(Var<Real> x, std::span<const std::uint8_t> key_mask);

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Real eps = Real(1e-12));

/// Inverted dropout. Identity in eval mode or at rate 0.
template <typename Real>
Var<Real> dropout(Var<Real> x, double rate, Mode mode, Rng& rng);

/// Gathers rows of `table`; backward scatter-adds.
template <typename Real>
Var<Real> select_rows(Var<Real> table, std::span<const std::size_t> rows);

template <typename Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts);

template <typename Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts);

template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t start, std::size_t count);

/// Sum of all elements, shape [1].
template <typename Real>
Var<Real> sum(Var<Real> x);

template <typename Real>
Var<Real> mean(Var<Real> x);

/// Column means over rows, shape [1 x cols].
template <typename Real>
Var<Real> mean_rows(Var<Real> x);

/// Column maxima over rows, shape [1 x cols]; gradient routes to the first
/// maximal row.
template <typename Real>
Var<Real> max_rows(Var<Real> x);

/// Mean over rows of -log softmax(logits)[target]. Entries with
/// valid[r * cols + c] == false are excluded from the normalizer when a mask
/// is given.
template <typename Real>
Var<Real> cross_entropy_logits(Var<Real> logits, std::span<const std::size_t> targets,
                               std::span<const std::uint8_t> valid = {});

/// Mean elementwise logistic loss; targets in [0, 1].
template <typename Real>
Var<Real> bce_logits(Var<Real> logits, const Tensor<Real>& targets);

/// Mean squared error against constant targets.
template <typename Real>
Var<Real> mse(Var<Real> pred, const Tensor<Real>& targets);

/// Affine map x * w + b.
template <typename Real>
Var<Real> linear(Var<Real> x, Var<Real> w, Var<Real> b) {
  return add(matmul(x, w), b);
}

// Forward-only kernels shared by ops and non-graph code.
namespace kernel {

template <typename Real>
Real gelu(Real x);

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x);

}  // namespace kernel

}  // namespace objtx::num
