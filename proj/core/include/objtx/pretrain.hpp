#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "objtx/model.hpp"
#include "objtx/track_model.hpp"

namespace objtx::pretrain {

using model::CorruptionMode;
using model::InstanceCorruption;
using model::ObjectTransformer;
using model::TokenSequence;
using num::Graph;
using num::Rng;
using num::Tensor;
using num::Var;

/// Which instances are masked and how each is corrupted.
struct MaskPlan {
  std::vector<InstanceCorruption> corruptions;  // one per masked instance
};

/// Candidate replacement features for random-feature corruption: every
/// detection feature of the current batch with the track it came from.
struct FeaturePool {
  struct Entry {
    std::size_t example = 0;
    std::int64_t track_id = 0;
    const std::vector<double>* z = nullptr;
  };
  std::vector<Entry> entries;

  void add_span(std::size_t example, const track::Span& span, bool include_objects);
};

/// Draws ceil(mask_fraction * |U|) (at least one) of the span's tokenized
/// instances that carry pseudo-labels, uniformly without replacement, and a
/// corruption mode per instance with probabilities 0.8 / 0.1 / 0.1.
/// Random-feature replacements come from `pool` entries of other instances.
/// Throws DataError when no instance has pseudo-labels.
MaskPlan plan_mask(const track::Span& span, bool include_objects, Rng& rng, double mask_fraction = 0.15,
                   const FeaturePool* pool = nullptr, std::size_t example = 0);

template <typename Real>
struct CorruptedExample {
  TokenSequence<Real> tokens;
  MaskPlan plan;
  std::vector<std::size_t> masked_rows;  // token indices of every masked detection
  Tensor<Real> targets;                  // pseudo-labels, one row per masked token
};

/// Plans the mask, embeds the corrupted span and collects the targets.
template <typename Real>
CorruptedExample<Real> select_and_corrupt(Graph<Real>& g, const track::Span& span,
                                          ObjectTransformer<Real>& model, num::Mode mode, Rng& mask_rng,
                                          Rng& slot_rng, double mask_fraction = 0.15,
                                          const FeaturePool* pool = nullptr, std::size_t example = 0);

/// Mean over rows of -sum_k p_k log max(p_hat_k, 1e-12).
template <typename Real>
Var<Real> masked_loss(Var<Real> p_hat, const Tensor<Real>& p);

/// Scalar form for a single pair of distributions.
double masked_loss_value(std::span<const double> p, std::span<const double> p_hat);

/// -log(exp(v.v+) / (exp(v.v+) + sum_n exp(v.v-_n))) for one anchor row `v`;
/// `negatives` holds one vector per row.
template <typename Real>
Var<Real> infonce_loss(Var<Real> v, Var<Real> v_pos, Var<Real> negatives);

double infonce_value(std::span<const double> v, std::span<const double> v_pos,
                     std::span<const std::vector<double>> negatives);

/// In-batch InfoNCE over rows of `v`: each row's positive is row partner[i],
/// every other row except itself is a negative. Mean over anchors.
template <typename Real>
Var<Real> infonce_batch(Var<Real> v, std::span<const std::size_t> partner);

/// Same loss assembled one anchor at a time through infonce_loss.
template <typename Real>
Var<Real> infonce_per_anchor(Var<Real> v, std::span<const std::size_t> partner);

/// Span drawn from one video: start offset within that video.
struct SpanRef {
  std::size_t video = 0;  // index into the video list
  double start = 0.0;
};

/// n examples as n/2 positive pairs from distinct segments.
struct CompatBatch {
  std::vector<SpanRef> examples;
  std::vector<std::size_t> partner;  // partner[i] is i's positive
};

/// Pairs examples[2k] and examples[2k+1]; both come from the same segment and
/// no two pairs share a segment. Throws DataError when fewer than n/2
/// segments have at least two distinct spans.
CompatBatch build_compat_batch(std::span<const track::Video> videos, std::size_t n, Rng& rng,
                               double span_length = 60.0, double stride = 1.0);

enum class Objective { kMask, kMaskCompat };

std::string_view to_string(Objective o);
Objective parse_objective(std::string_view s);

struct PretrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch = 16;
  Objective objective = Objective::kMaskCompat;
  double base_lr = 1e-4;
  double warmup_frac = 0.1;
  double weight_decay = 0.01;
  double mask_fraction = 0.15;
  double span_length = 60.0;
  double stride = 1.0;
  std::uint64_t seed = 0;
};

struct TraceRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double mask_loss = 0.0;
  double compat_loss = 0.0;  // zero for the mask-only objective
  double total = 0.0;
};

/// Runs `iterations` Adam steps with the warm-up/decay schedule. Each step
/// samples a batch of spans (compatibility pairs when the compat objective
/// is on), sums the objective losses and updates every trainable parameter.
/// `on_step`, when given, sees each record as it is produced.
template <typename Real>
std::vector<TraceRecord> pretrain_loop(std::span<const track::Video> videos, ObjectTransformer<Real>& model,
                                       const PretrainConfig& config,
                                       const std::function<void(const TraceRecord&)>& on_step = {});

/// Loss of one batch without updating anything (eval mode, no dropout).
template <typename Real>
TraceRecord evaluate_batch(std::span<const track::Video> videos, ObjectTransformer<Real>& model,
                           const PretrainConfig& config, std::uint64_t batch_seed);

}  // namespace objtx::pretrain
