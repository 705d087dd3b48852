#include "objtx/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "objtx/errors.hpp"
#include "objtx/numerics/optim.hpp"
#include "objtx/preprocess.hpp"

namespace objtx::finetune {

using num::SeedSequence;
using num::Shape;
using num::Tensor;

void TaskSpec::check_label(double value) const {
  if (!std::isfinite(value)) throw DataError("task '" + name + "': non-finite label");
  if (kind == TaskKind::kClassification) {
    if (value < 0.0 || value >= static_cast<double>(n_classes) || value != std::floor(value)) {
      throw DataError("task '" + name + "': label " + std::to_string(value) + " outside [0, " +
                      std::to_string(n_classes) + ")");
    }
  }
}

Splits split_dataset(std::span<const track::Video> videos, std::array<double, 3> ratios, bool movie_disjoint,
                     std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  std::vector<std::int64_t> units;
  if (movie_disjoint) {
    std::set<std::int64_t> movies;
    for (const auto& v : videos) movies.insert(v.movie_id);
    units.assign(movies.begin(), movies.end());
    if (units.size() < 3) throw DataError("movie-disjoint split needs at least 3 movies");
  } else {
    for (std::size_t i = 0; i < videos.size(); ++i) units.push_back(static_cast<std::int64_t>(i));
    if (units.size() < 3) throw DataError("split needs at least 3 videos");
  }
  Rng rng = SeedSequence(seed).stream("split");
  std::shuffle(units.begin(), units.end(), rng);

  const auto n = static_cast<double>(units.size());
  const auto n_train = std::min<std::size_t>(static_cast<std::size_t>(std::lround(ratios[0] * n)), units.size());
  const auto n_val =
      std::min<std::size_t>(static_cast<std::size_t>(std::lround(ratios[1] * n)), units.size() - n_train);
  std::map<std::int64_t, int> which;
  for (std::size_t i = 0; i < units.size(); ++i) which[units[i]] = i < n_train ? 0 : i < n_train + n_val ? 1 : 2;

  Splits s;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const std::int64_t key = movie_disjoint ? videos[i].movie_id : static_cast<std::int64_t>(i);
    switch (which.at(key)) {
      case 0: s.train.push_back(i); break;
      case 1: s.val.push_back(i); break;
      default: s.test.push_back(i); break;
    }
  }
  return s;
}

std::string_view to_string(Backbone b) {
  switch (b) {
    case Backbone::kTransformer: return "transformer";
    case Backbone::kAvgPool: return "avg-pool";
    case Backbone::kMaxPool: return "max-pool";
    case Backbone::kShortTerm: return "short-term";
  }
  return "?";
}

Backbone parse_backbone(std::string_view s) {
  if (s == "transformer") return Backbone::kTransformer;
  if (s == "avg-pool") return Backbone::kAvgPool;
  if (s == "max-pool") return Backbone::kMaxPool;
  if (s == "short-term") return Backbone::kShortTerm;
  throw ConfigError("unknown backbone '" + std::string(s) + "'");
}

template <typename Real>
Var<Real> pool_rows(Var<Real> rows, Backbone mode) {
  switch (mode) {
    case Backbone::kAvgPool: return num::mean_rows(rows);
    case Backbone::kMaxPool: return num::max_rows(rows);
    default: throw UsageError("pool_rows: mode must be avg-pool or max-pool");
  }
}

template <typename Real>
Var<Real> pool_baseline(Graph<Real>& g, const track::Span& span, ObjectTransformer<Real>& model, Backbone mode,
                        Mode run_mode, Rng& slot_rng) {
  if (mode == Backbone::kTransformer) throw UsageError("pool_baseline: transformer is not a pooling mode");
  auto tokens = model::embed_tokens(g, span, model, run_mode, slot_rng);
  if (tokens.size() < 2) throw DataError("pool_baseline: span has no detections");
  if (mode == Backbone::kShortTerm) {
    const double center = span.length / 2.0;
    std::size_t best = 1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t r = 1; r < tokens.size(); ++r) {
      const auto& ref = tokens.provenance[r];
      const double gap = std::abs(span.tracks[ref.track_index].detections[ref.detection_index].t - center);
      if (gap < best_gap) {
        best_gap = gap;
        best = r;
      }
    }
    return num::select_rows(tokens.embeddings, std::span<const std::size_t>(&best, 1));
  }
  std::vector<std::size_t> rows(tokens.size() - 1);
  std::iota(rows.begin(), rows.end(), 1);
  return pool_rows(num::select_rows(tokens.embeddings, std::span<const std::size_t>(rows)), mode);
}

template <typename Real>
Var<Real> predict(Graph<Real>& g, const track::Span& span, ObjectTransformer<Real>& model, Backbone backbone,
                  Mode mode, Rng& slot_rng, Rng& dropout_rng) {
  Var<Real> feature;
  if (backbone == Backbone::kTransformer) {
    auto tokens = model::embed_tokens(g, span, model, mode, slot_rng);
    feature = model::cls_row(model::encode(tokens, model, mode, dropout_rng));
  } else {
    feature = pool_baseline(g, span, model, backbone, mode, slot_rng);
  }
  return model::head_task(feature, model, mode, dropout_rng);
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw UsageError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double eval_metrics(std::span<const std::vector<double>> outputs, std::span<const double> labels, TaskKind kind) {
  if (outputs.size() != labels.size()) {
    throw UsageError("eval_metrics: " + std::to_string(outputs.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (outputs.empty()) throw UsageError("eval_metrics: no predictions");
  double acc = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (kind == TaskKind::kClassification) {
      acc += static_cast<double>(argmax(outputs[i])) == labels[i] ? 1.0 : 0.0;
    } else {
      if (outputs[i].size() != 1) throw UsageError("eval_metrics: regression outputs must be scalars");
      const double d = outputs[i][0] - labels[i];
      acc += d * d;
    }
  }
  return acc / static_cast<double>(outputs.size());
}

track::Span center_span(const track::Video& video, double length, double stride) {
  double start = 0.0;
  if (video.duration > length) start = std::floor((video.duration - length) / 2.0 / stride) * stride;
  return prep::cut_span(video, start, length);
}

template <typename Real>
double evaluate(std::span<const track::Video> videos, std::span<const double> labels,
                std::span<const std::size_t> indices, ObjectTransformer<Real>& model, const TaskSpec& task,
                Backbone backbone, double span_length, double stride) {
  if (indices.empty()) throw DataError("evaluation split is empty");
  Rng unused(0);
  std::vector<std::vector<double>> outputs;
  std::vector<double> y;
  for (std::size_t i : indices) {
    const auto span = prep::truncate_tokens(center_span(videos[i], span_length, stride), model.config().token_cap,
                                            model.config().include_objects);
    Graph<Real> g;
    Var<Real> out = predict(g, span, model, backbone, Mode::kEval, unused, unused);
    outputs.emplace_back(out.value().data().begin(), out.value().data().end());
    y.push_back(labels[i]);
  }
  return eval_metrics(outputs, y, task.kind);
}

template <typename Real>
FinetuneResult<Real> run_finetune(std::span<const track::Video> videos, std::span<const double> labels,
                                  const Splits& splits, const ObjectTransformer<Real>& init, const TaskSpec& task,
                                  const FinetuneConfig& config) {
  if (splits.train.empty() || splits.val.empty() || splits.test.empty()) {
    throw DataError("fine-tuning needs non-empty train, validation and test splits");
  }
  if (labels.size() != videos.size()) throw UsageError("one label per video required");
  for (double l : labels) task.check_label(l);
  if (config.epochs.empty() || config.batches.empty()) throw ConfigError("empty fine-tuning grid");

  std::vector<std::size_t> epochs = config.epochs, batches = config.batches;
  std::sort(epochs.begin(), epochs.end());
  std::sort(batches.begin(), batches.end());
  for (std::size_t b : batches) {
    if (b == 0) throw ConfigError("batch sizes must be positive");
  }

  const SeedSequence seeds(config.seed);
  const bool higher = task.kind == TaskKind::kClassification;
  const auto& mc = init.config();

  GridResult grid;
  grid.higher_is_better = higher;
  std::optional<ObjectTransformer<Real>> best;
  std::size_t cell_index = 0;
  for (std::size_t ep : epochs) {
    for (std::size_t bs : batches) {
      ObjectTransformer<Real> m = init;
      m.registry().set_all_trainable(true);
      m.set_task_head(task.outputs(), seeds.derive("init.task"));
      num::AdamState<Real> adam(m.registry(), config.weight_decay);
      Rng batch_rng = seeds.stream("finetune.batch", cell_index);
      Rng slot_rng = seeds.stream("finetune.instance", cell_index);
      Rng drop_rng = seeds.stream("finetune.dropout", cell_index);

      const std::size_t per_epoch = (splits.train.size() + bs - 1) / bs;
      const std::size_t total = ep * per_epoch;
      std::size_t step = 0;
      std::vector<std::size_t> order = splits.train;
      for (std::size_t e = 0; e < ep; ++e) {
        std::shuffle(order.begin(), order.end(), batch_rng);
        for (std::size_t off = 0; off < order.size(); off += bs) {
          const std::size_t end = std::min(order.size(), off + bs);
          Graph<Real> g;
          std::vector<Var<Real>> outs;
          std::vector<std::size_t> cls_targets;
          Tensor<Real> reg_targets(Shape{end - off, 1});
          for (std::size_t k = off; k < end; ++k) {
            const auto& video = videos[order[k]];
            const auto starts = prep::span_starts(video.duration, config.span_length, config.stride);
            const double start = starts[num::uniform_index(batch_rng, starts.size())];
            const auto span = prep::truncate_tokens(prep::cut_span(video, start, config.span_length), mc.token_cap,
                                                    mc.include_objects);
            outs.push_back(predict(g, span, m, config.backbone, Mode::kTrain, slot_rng, drop_rng));
            if (higher) cls_targets.push_back(static_cast<std::size_t>(labels[order[k]]));
            else reg_targets[k - off] = Real(labels[order[k]]);
          }
          Var<Real> out = num::concat_rows<Real>(outs);
          Var<Real> loss = higher ? num::cross_entropy_logits(out, std::span<const std::size_t>(cls_targets))
                                  : num::mse(out, reg_targets);
          m.registry().zero_grad();
          g.backward(loss);
          num::adam_step(m.registry(), adam, num::lr_schedule(step, total, config.base_lr, config.warmup_frac));
          ++step;
        }
      }

      const double val = evaluate(videos, labels, splits.val, m, task, config.backbone, config.span_length,
                                  config.stride);
      grid.cells.push_back({ep, bs, val});
      const bool better = !best || (higher ? val > grid.cells[grid.chosen].val_score
                                           : val < grid.cells[grid.chosen].val_score);
      if (better) {
        grid.chosen = grid.cells.size() - 1;
        best = std::move(m);
      }
      ++cell_index;
    }
  }
  grid.test_score =
      evaluate(videos, labels, splits.test, *best, task, config.backbone, config.span_length, config.stride);
  return FinetuneResult<Real>{std::move(grid), std::move(*best)};
}

std::vector<double> task_labels(const track::Corpus& corpus, const TaskSpec& task) {
  std::vector<double> out;
  out.reserve(corpus.videos.size());
  for (const auto& v : corpus.videos) {
    const double value = corpus.label(v.video_id, task.name).value;
    task.check_label(value);
    out.push_back(value);
  }
  return out;
}

std::vector<FusionExample> fusion_examples(const track::Corpus& corpus, std::span<const std::size_t> indices,
                                           std::string_view task, double span_length, double stride) {
  std::map<std::pair<std::int64_t, std::int64_t>, const track::Label*> by_track;
  for (const auto& l : corpus.labels) {
    if (l.track_id && l.task == task && !l.scores.empty()) by_track[{l.video_id, *l.track_id}] = &l;
  }
  std::vector<FusionExample> out;
  for (std::size_t i : indices) {
    const auto& video = corpus.videos.at(i);
    track::Span span = center_span(video, span_length, stride);
    for (const auto& tr : span.tracks) {
      if (tr.source_class() != track::SourceClass::kPerson) continue;
      auto it = by_track.find({video.video_id, tr.track_id});
      if (it == by_track.end()) continue;
      FusionExample ex;
      ex.span = span;
      ex.target_track = tr.track_id;
      ex.label = static_cast<std::size_t>(it->second->value);
      ex.short_term = it->second->scores;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

template <typename Real>
Var<Real> fusion_context(Graph<Real>& g, const track::Span& span, std::int64_t target_track,
                         ObjectTransformer<Real>& model) {
  Rng unused(0);
  const auto slots = model::assign_instance_slots(span, model.config(), Mode::kEval, unused);
  model::InstanceCorruption mask;
  mask.track_id = target_track;
  mask.mode = model::CorruptionMode::kLearnedReplace;
  auto tokens = model::embed_tokens_with_slots(g, span, model, slots, std::span<const model::InstanceCorruption>(&mask, 1));
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    if (tokens.provenance[r].masked) rows.push_back(r);
  }
  if (rows.empty()) throw UsageError("fusion: target track " + std::to_string(target_track) + " is not in the span");
  Var<Real> h = model::encode(tokens, model, Mode::kEval, unused);
  return num::mean_rows(model::head_mask_hidden(num::select_rows(h, std::span<const std::size_t>(rows)), model));
}

template <typename Real>
Var<Real> fuse(Var<Real> context, Var<Real> short_term, ObjectTransformer<Real>& model) {
  const auto& ids = model.ids();
  if (ids.fusion_w == model::ModelParams::kAbsent) throw UsageError("model has no fusion layer");
  Graph<Real>& g = *context.graph;
  const Var<Real> parts[] = {context, short_term};
  return num::linear(num::concat_cols<Real>(parts), g.param(model.param(ids.fusion_w)),
                     g.param(model.param(ids.fusion_b)));
}

template <typename Real>
Var<Real> ava_late_fusion(Graph<Real>& g, const FusionExample& ex, ObjectTransformer<Real>& model) {
  std::vector<Real> st(ex.short_term.begin(), ex.short_term.end());
  Var<Real> ctx = fusion_context(g, ex.span, ex.target_track, model);
  return fuse(ctx, g.constant(Tensor<Real>::row(std::span<const Real>(st))), model);
}

namespace {

template <typename Real>
Tensor<Real> cached_contexts(std::span<const FusionExample> examples, ObjectTransformer<Real>& model) {
  const std::size_t w = model.config().mask_width();
  Tensor<Real> out(Shape{examples.size(), w});
  for (std::size_t i = 0; i < examples.size(); ++i) {
    Graph<Real> g;
    Var<Real> c = fusion_context(g, examples[i].span, examples[i].target_track, model);
    std::copy(c.value().data().begin(), c.value().data().end(), out.row_span(i).begin());
  }
  return out;
}

template <typename Real>
Tensor<Real> short_term_matrix(std::span<const FusionExample> examples, std::size_t classes) {
  Tensor<Real> out(Shape{examples.size(), classes});
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].short_term.size() != classes) throw DimensionError("short-term score width differs");
    for (std::size_t k = 0; k < classes; ++k) out(i, k) = Real(examples[i].short_term[k]);
  }
  return out;
}

template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& t, std::span<const std::size_t> rows) {
  Tensor<Real> out(Shape{rows.size(), t.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(t.row_span(rows[i]).begin(), t.row_span(rows[i]).end(), out.row_span(i).begin());
  }
  return out;
}

}  // namespace

template <typename Real>
std::vector<double> train_fusion(std::span<const FusionExample> examples, ObjectTransformer<Real>& model,
                                 const FusionConfig& config) {
  if (examples.empty()) throw DataError("late fusion needs training examples");
  const std::size_t classes = examples.front().short_term.size();
  if (classes == 0) throw DataError("late fusion needs short-term scores");
  if (model.ids().fusion_w == model::ModelParams::kAbsent) {
    model.set_fusion_layer(classes, SeedSequence(config.seed).derive("init.fusion"));
  }
  const auto& ids = model.ids();
  for (std::size_t i = 0; i < model.registry().size(); ++i) {
    model.registry()[i].trainable = i == ids.fusion_w || i == ids.fusion_b;
  }

  const Tensor<Real> ctx = cached_contexts(examples, model);
  const Tensor<Real> st = short_term_matrix<Real>(examples, classes);
  num::AdamState<Real> adam(model.registry(), config.weight_decay);
  Rng rng = SeedSequence(config.seed).stream("fusion.batch");
  std::vector<double> trace;
  for (std::size_t step = 0; step < config.iterations; ++step) {
    std::vector<std::size_t> rows(std::min(config.batch, examples.size()));
    for (auto& r : rows) r = num::uniform_index(rng, examples.size());
    Tensor<Real> targets(Shape{rows.size(), classes});
    for (std::size_t i = 0; i < rows.size(); ++i) targets(i, examples[rows[i]].label) = Real(1);
    Graph<Real> g;
    Var<Real> out = fuse(g.constant(gather_rows(ctx, rows)), g.constant(gather_rows(st, rows)), model);
    Var<Real> loss = num::bce_logits(out, targets);
    model.registry().zero_grad();
    g.backward(loss);
    num::adam_step(model.registry(), adam, num::lr_schedule(step, config.iterations, config.base_lr, config.warmup_frac));
    trace.push_back(static_cast<double>(loss.value()[0]));
  }
  return trace;
}

double per_class_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                          std::size_t n_classes) {
  if (predicted.size() != labels.size()) throw UsageError("per_class_accuracy: length mismatch");
  std::vector<double> hit(n_classes), seen(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw UsageError("per_class_accuracy: label out of range");
    seen[labels[i]] += 1.0;
    if (predicted[i] == labels[i]) hit[labels[i]] += 1.0;
  }
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    if (seen[k] == 0.0) continue;
    total += hit[k] / seen[k];
    ++present;
  }
  return present ? total / static_cast<double>(present) : 0.0;
}

template <typename Real>
FusionScores evaluate_fusion(std::span<const FusionExample> examples, ObjectTransformer<Real>& model) {
  if (examples.empty()) throw DataError("late fusion evaluation needs examples");
  const std::size_t classes = examples.front().short_term.size();
  std::vector<std::size_t> fused, shortp, labels;
  for (const auto& ex : examples) {
    Graph<Real> g;
    Var<Real> out = ava_late_fusion(g, ex, model);
    std::vector<double> scores(out.value().data().begin(), out.value().data().end());
    fused.push_back(argmax(scores));
    shortp.push_back(argmax(ex.short_term));
    labels.push_back(ex.label);
  }
  FusionScores s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s.fused_accuracy += fused[i] == labels[i] ? 1.0 : 0.0;
    s.short_term_accuracy += shortp[i] == labels[i] ? 1.0 : 0.0;
  }
  s.fused_accuracy /= static_cast<double>(labels.size());
  s.short_term_accuracy /= static_cast<double>(labels.size());
  s.fused_class_accuracy = per_class_accuracy(fused, labels, classes);
  s.short_term_class_accuracy = per_class_accuracy(shortp, labels, classes);
  return s;
}

#define OBJTX_INSTANTIATE_FINETUNE(R)                                                                        \
  template Var<R> pool_rows(Var<R>, Backbone);                                                              \
  template Var<R> pool_baseline(Graph<R>&, const track::Span&, ObjectTransformer<R>&, Backbone, Mode, Rng&); \
  template Var<R> predict(Graph<R>&, const track::Span&, ObjectTransformer<R>&, Backbone, Mode, Rng&, Rng&); \
  template double evaluate(std::span<const track::Video>, std::span<const double>,                          \
                           std::span<const std::size_t>, ObjectTransformer<R>&, const TaskSpec&, Backbone,   \
                           double, double);                                                                  \
  template FinetuneResult<R> run_finetune(std::span<const track::Video>, std::span<const double>,           \
                                          const Splits&, const ObjectTransformer<R>&, const TaskSpec&,      \
                                          const FinetuneConfig&);                                           \
  template Var<R> fusion_context(Graph<R>&, const track::Span&, std::int64_t, ObjectTransformer<R>&);       \
  template Var<R> fuse(Var<R>, Var<R>, ObjectTransformer<R>&);                                              \
  template Var<R> ava_late_fusion(Graph<R>&, const FusionExample&, ObjectTransformer<R>&);                  \
  template std::vector<double> train_fusion(std::span<const FusionExample>, ObjectTransformer<R>&,          \
                                            const FusionConfig&);                                           \
  template FusionScores evaluate_fusion(std::span<const FusionExample>, ObjectTransformer<R>&);

OBJTX_INSTANTIATE_FINETUNE(float)
OBJTX_INSTANTIATE_FINETUNE(double)

#undef OBJTX_INSTANTIATE_FINETUNE

}  // namespace objtx::finetune
