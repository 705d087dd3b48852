#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "objtx/model.hpp"
#include "objtx/track_model.hpp"

namespace objtx::finetune {

using model::ObjectTransformer;
using num::Graph;
using num::Mode;
using num::Rng;
using num::Var;

enum class TaskKind { kClassification, kRegression };

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::kClassification;
  std::size_t n_classes = 2;  // classification only

  std::size_t outputs() const { return kind == TaskKind::kClassification ? n_classes : 1; }
  /// Throws DataError when a label is outside the declared range.
  void check_label(double value) const;
};

/// Indices into the video list.
struct Splits {
  std::vector<std::size_t> train, val, test;
};

/// Partitions videos 70/15/15 (by default). Units are videos, or movies when
/// `movie_disjoint`; counts are round(ratio * units) for train and val, the
/// rest for test. Deterministic per seed.
Splits split_dataset(std::span<const track::Video> videos, std::array<double, 3> ratios = {0.7, 0.15, 0.15},
                     bool movie_disjoint = true, std::uint64_t seed = 0);

enum class Backbone { kTransformer, kAvgPool, kMaxPool, kShortTerm };

std::string_view to_string(Backbone b);
Backbone parse_backbone(std::string_view s);

/// Elementwise mean or max over the rows of `rows`.
template <typename Real>
Var<Real> pool_rows(Var<Real> rows, Backbone mode);

/// Video-level vector of a baseline: mean or max over every detection
/// token's input vector, or the single token nearest the span center.
/// Throws DataError for spans without tokens.
template <typename Real>
Var<Real> pool_baseline(Graph<Real>& g, const track::Span& span, ObjectTransformer<Real>& model, Backbone mode,
                        Mode run_mode, Rng& slot_rng);

/// Task-head output for one span: logits (classification) or a scalar.
template <typename Real>
Var<Real> predict(Graph<Real>& g, const track::Span& span, ObjectTransformer<Real>& model, Backbone backbone,
                  Mode mode, Rng& slot_rng, Rng& dropout_rng);

/// Top-1 accuracy (argmax, ties to the lowest index) or mean squared error.
/// Regression outputs are single-element rows. Throws UsageError on length
/// mismatch or empty input.
double eval_metrics(std::span<const std::vector<double>> outputs, std::span<const double> labels, TaskKind kind);

struct FinetuneConfig {
  std::vector<std::size_t> epochs{3, 5, 10, 20, 30, 50};
  std::vector<std::size_t> batches{16, 32};
  double base_lr = 2e-5;
  double warmup_frac = 0.1;
  double weight_decay = 0.01;
  double span_length = 60.0;
  double stride = 1.0;
  Backbone backbone = Backbone::kTransformer;
  std::uint64_t seed = 0;
};

struct GridCell {
  std::size_t epochs = 0;
  std::size_t batch = 0;
  double val_score = 0.0;
};

struct GridResult {
  std::vector<GridCell> cells;  // sorted by (epochs, batch)
  std::size_t chosen = 0;
  double test_score = 0.0;  // of the chosen cell only
  bool higher_is_better = true;
};

template <typename Real>
struct FinetuneResult {
  GridResult grid;
  ObjectTransformer<Real> model;
};

/// Center span (start rounded down to the stride grid) used for evaluation.
track::Span center_span(const track::Video& video, double length = 60.0, double stride = 1.0);

/// Score of `model` on the center spans of `indices`.
template <typename Real>
double evaluate(std::span<const track::Video> videos, std::span<const double> labels,
                std::span<const std::size_t> indices, ObjectTransformer<Real>& model, const TaskSpec& task,
                Backbone backbone, double span_length = 60.0, double stride = 1.0);

/// Grid search. Every cell starts from `init` with a freshly initialized task
/// head, trains the whole model (one random span per training video per
/// epoch, Adam with warm-up/decay) and is scored on the validation split.
/// The best cell (ties: fewer epochs, then smaller batch) is scored once on
/// the test split. Throws DataError on an empty split.
template <typename Real>
FinetuneResult<Real> run_finetune(std::span<const track::Video> videos, std::span<const double> labels,
                                  const Splits& splits, const ObjectTransformer<Real>& init, const TaskSpec& task,
                                  const FinetuneConfig& config);

/// Labels of `task` for every video, in video order.
std::vector<double> task_labels(const track::Corpus& corpus, const TaskSpec& task);

// Late fusion with a masked target instance.

struct FusionExample {
  track::Span span;
  std::int64_t target_track = 0;
  std::size_t label = 0;
  std::vector<double> short_term;  // per-class scores
};

/// Center-span examples for every person track carrying a `task` label
/// with per-class scores, restricted to `indices`.
std::vector<FusionExample> fusion_examples(const track::Corpus& corpus, std::span<const std::size_t> indices,
                                           std::string_view task, double span_length = 60.0, double stride = 1.0);

/// Mask-head penultimate representation of the target, averaged over its
/// detections, with the target's features replaced by z_mask (eval mode).
template <typename Real>
Var<Real> fusion_context(Graph<Real>& g, const track::Span& span, std::int64_t target_track,
                         ObjectTransformer<Real>& model);

/// [context ; short_term] through the fusion linear layer.
template <typename Real>
Var<Real> fuse(Var<Real> context, Var<Real> short_term, ObjectTransformer<Real>& model);

/// fuse(fusion_context(...), short_term_logits).
template <typename Real>
Var<Real> ava_late_fusion(Graph<Real>& g, const FusionExample& ex, ObjectTransformer<Real>& model);

struct FusionConfig {
  std::size_t iterations = 2000;
  std::size_t batch = 16;
  double base_lr = 1e-4;
  double warmup_frac = 0.1;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

/// Registers the fusion layer if needed, freezes every other tensor and
/// trains the layer with per-class logistic loss. Since the frozen part is
/// deterministic, each example's context is computed once.
template <typename Real>
std::vector<double> train_fusion(std::span<const FusionExample> examples, ObjectTransformer<Real>& model,
                                 const FusionConfig& config);

struct FusionScores {
  double fused_accuracy = 0.0;
  double short_term_accuracy = 0.0;
  double fused_class_accuracy = 0.0;       // mean per-class accuracy
  double short_term_class_accuracy = 0.0;
};

template <typename Real>
FusionScores evaluate_fusion(std::span<const FusionExample> examples, ObjectTransformer<Real>& model);

/// Mean over classes present in `labels` of the per-class top-1 accuracy.
double per_class_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                          std::size_t n_classes);

std::size_t argmax(std::span<const double> v);

}  // namespace objtx::finetune
