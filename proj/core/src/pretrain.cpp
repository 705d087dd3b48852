#include "objtx/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "objtx/errors.hpp"
#include "objtx/numerics/optim.hpp"
#include "objtx/preprocess.hpp"

namespace objtx::pretrain {

using num::Mode;
using num::Shape;

void FeaturePool::add_span(std::size_t example, const track::Span& span, bool include_objects) {
  for (const auto& tr : span.tracks) {
    if (!track::is_tokenized(tr, include_objects)) continue;
    for (const auto& d : tr.detections) entries.push_back({example, tr.track_id, &d.z});
  }
}

MaskPlan plan_mask(const track::Span& span, bool include_objects, Rng& rng, double mask_fraction,
                   const FeaturePool* pool, std::size_t example) {
  if (!(mask_fraction > 0.0 && mask_fraction <= 1.0)) throw ConfigError("mask_fraction must lie in (0, 1]");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < span.tracks.size(); ++i) {
    const auto& tr = span.tracks[i];
    if (!track::is_tokenized(tr, include_objects)) continue;
    const bool labeled = std::all_of(tr.detections.begin(), tr.detections.end(),
                                     [](const track::Detection& d) { return d.pseudo_label.has_value(); });
    if (labeled) candidates.push_back(i);
  }
  if (candidates.empty()) throw DataError("span has no instance with pseudo-labels to mask");

  const auto want = static_cast<std::size_t>(std::ceil(mask_fraction * static_cast<double>(candidates.size()) - 1e-9));
  const std::size_t k = std::clamp<std::size_t>(want, 1, candidates.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(candidates[i], candidates[i + num::uniform_index(rng, candidates.size() - i)]);
  }

  MaskPlan plan;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& tr = span.tracks[candidates[i]];
    InstanceCorruption c;
    c.track_id = tr.track_id;
    const double u = num::uniform01(rng);
    if (u < 0.8) {
      c.mode = CorruptionMode::kLearnedReplace;
    } else if (u < 0.9) {
      c.mode = CorruptionMode::kRandomFeature;
      std::vector<const std::vector<double>*> foreign;
      if (pool != nullptr) {
        for (const auto& e : pool->entries) {
          if (e.example != example || e.track_id != tr.track_id) foreign.push_back(e.z);
        }
      } else {
        for (const auto& other : span.tracks) {
          if (other.track_id == tr.track_id || !track::is_tokenized(other, include_objects)) continue;
          for (const auto& d : other.detections) foreign.push_back(&d.z);
        }
      }
      if (foreign.empty()) {
        for (const auto& d : tr.detections) foreign.push_back(&d.z);
      }
      c.replacement = *foreign[num::uniform_index(rng, foreign.size())];
    } else {
      c.mode = CorruptionMode::kKeep;
    }
    plan.corruptions.push_back(std::move(c));
  }
  return plan;
}

template <typename Real>
CorruptedExample<Real> select_and_corrupt(Graph<Real>& g, const track::Span& span, ObjectTransformer<Real>& model,
                                          Mode mode, Rng& mask_rng, Rng& slot_rng, double mask_fraction,
                                          const FeaturePool* pool, std::size_t example) {
  CorruptedExample<Real> ex;
  ex.plan = plan_mask(span, model.config().include_objects, mask_rng, mask_fraction, pool, example);
  ex.tokens = model::embed_tokens(g, span, model, mode, slot_rng,
                                  std::span<const InstanceCorruption>(ex.plan.corruptions));
  for (std::size_t r = 0; r < ex.tokens.size(); ++r) {
    if (ex.tokens.provenance[r].masked) ex.masked_rows.push_back(r);
  }
  const std::size_t d = model.config().d_label;
  ex.targets = Tensor<Real>(Shape{ex.masked_rows.size(), d});
  for (std::size_t i = 0; i < ex.masked_rows.size(); ++i) {
    const auto& ref = ex.tokens.provenance[ex.masked_rows[i]];
    const auto& p = *span.tracks[ref.track_index].detections[ref.detection_index].pseudo_label;
    if (p.size() != d) throw DimensionError("pseudo-label has " + std::to_string(p.size()) + " classes, model expects " + std::to_string(d));
    for (std::size_t k = 0; k < d; ++k) ex.targets(i, k) = Real(p[k]);
  }
  return ex;
}

template <typename Real>
Var<Real> masked_loss(Var<Real> p_hat, const Tensor<Real>& p) {
  if (p_hat.shape() != p.shape()) throw DimensionError("masked_loss: prediction and target shapes differ");
  Graph<Real>& g = *p_hat.graph;
  Var<Real> logp = num::log_clamped(p_hat, Real(1e-12));
  Var<Real> prod = num::mul(logp, g.constant(p));
  return num::scale(num::sum(prod), Real(-1) / Real(p.rows()));
}

double masked_loss_value(std::span<const double> p, std::span<const double> p_hat) {
  if (p.size() != p_hat.size()) throw DimensionError("masked_loss: distribution sizes differ");
  double loss = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) loss -= p[k] * std::log(std::max(p_hat[k], 1e-12));
  return loss;
}

template <typename Real>
Var<Real> infonce_loss(Var<Real> v, Var<Real> v_pos, Var<Real> negatives) {
  if (v.rows() != 1 || v_pos.rows() != 1) throw DimensionError("infonce_loss: anchor and positive must be single rows");
  const Var<Real> parts[] = {v_pos, negatives};
  Var<Real> logits = num::matmul_nt(v, num::concat_rows<Real>(parts));
  const std::size_t target = 0;
  return num::cross_entropy_logits(logits, std::span<const std::size_t>(&target, 1));
}

double infonce_value(std::span<const double> v, std::span<const double> v_pos,
                     std::span<const std::vector<double>> negatives) {
  if (negatives.empty()) throw UsageError("infonce: need at least one negative");
  auto dot = [&](std::span<const double> w) {
    if (w.size() != v.size()) throw DimensionError("infonce: vector sizes differ");
    return std::inner_product(v.begin(), v.end(), w.begin(), 0.0);
  };
  std::vector<double> logits{dot(v_pos)};
  for (const auto& n : negatives) logits.push_back(dot(n));
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return -(logits[0] - mx - std::log(z));
}

template <typename Real>
Var<Real> infonce_batch(Var<Real> v, std::span<const std::size_t> partner) {
  const std::size_t n = v.rows();
  if (partner.size() != n) throw DimensionError("infonce_batch: one partner per row required");
  if (n < 3) throw UsageError("infonce_batch: need at least one negative per anchor");
  std::vector<std::uint8_t> valid(n * n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (partner[i] >= n || partner[i] == i) throw UsageError("infonce_batch: invalid partner index");
    valid[i * n + i] = 0;
  }
  return num::cross_entropy_logits(num::matmul_nt(v, v), partner, std::span<const std::uint8_t>(valid));
}

template <typename Real>
Var<Real> infonce_per_anchor(Var<Real> v, std::span<const std::size_t> partner) {
  const std::size_t n = v.rows();
  if (partner.size() != n) throw DimensionError("infonce: one partner per row required");
  Var<Real> total{};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> negs;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && j != partner[i]) negs.push_back(j);
    }
    const std::size_t self[] = {i};
    const std::size_t pos[] = {partner[i]};
    Var<Real> l = infonce_loss(num::select_rows(v, std::span<const std::size_t>(self)),
                               num::select_rows(v, std::span<const std::size_t>(pos)),
                               num::select_rows(v, std::span<const std::size_t>(negs)));
    total = i == 0 ? l : num::add(total, l);
  }
  return num::scale(total, Real(1) / Real(n));
}

CompatBatch build_compat_batch(std::span<const track::Video> videos, std::size_t n, Rng& rng,
                               double span_length, double stride) {
  if (n < 4 || n % 2 != 0) throw UsageError("compat batch size must be even and at least 4");
  // Candidate spans of every segment, in video order.
  std::map<std::int64_t, std::vector<SpanRef>> by_segment;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    for (double s : prep::span_starts(videos[v].duration, span_length, stride)) {
      by_segment[videos[v].segment_id].push_back({v, s});
    }
  }
  std::vector<const std::vector<SpanRef>*> eligible;
  for (const auto& [seg, refs] : by_segment) {
    if (refs.size() >= 2) eligible.push_back(&refs);
  }
  if (eligible.size() < n / 2) {
    throw DataError("compat batch of " + std::to_string(n) + " needs " + std::to_string(n / 2) +
                    " segments with two spans, corpus has " + std::to_string(eligible.size()));
  }
  CompatBatch batch;
  for (std::size_t k = 0; k < n / 2; ++k) {
    std::swap(eligible[k], eligible[k + num::uniform_index(rng, eligible.size() - k)]);
    const auto& refs = *eligible[k];
    const std::size_t a = num::uniform_index(rng, refs.size());
    std::size_t b = num::uniform_index(rng, refs.size() - 1);
    if (b >= a) ++b;
    batch.examples.push_back(refs[a]);
    batch.examples.push_back(refs[b]);
    batch.partner.push_back(2 * k + 1);
    batch.partner.push_back(2 * k);
  }
  return batch;
}

std::string_view to_string(Objective o) { return o == Objective::kMask ? "mask" : "mask+compat"; }

Objective parse_objective(std::string_view s) {
  if (s == "mask") return Objective::kMask;
  if (s == "mask+compat") return Objective::kMaskCompat;
  throw ConfigError("unknown objective '" + std::string(s) + "' (expected mask or mask+compat)");
}

namespace {

struct StepRngs {
  Rng batch, mask, slot, dropout;
};

std::vector<track::Span> draw_spans(std::span<const track::Video> videos, const PretrainConfig& c,
                                    const model::ModelConfig& mc, Rng& rng, std::vector<std::size_t>& partner) {
  std::vector<SpanRef> refs;
  partner.clear();
  if (c.objective == Objective::kMaskCompat) {
    CompatBatch b = build_compat_batch(videos, c.batch, rng, c.span_length, c.stride);
    refs = std::move(b.examples);
    partner = std::move(b.partner);
  } else {
    for (std::size_t i = 0; i < c.batch; ++i) {
      const std::size_t v = num::uniform_index(rng, videos.size());
      const auto starts = prep::span_starts(videos[v].duration, c.span_length, c.stride);
      refs.push_back({v, starts[num::uniform_index(rng, starts.size())]});
    }
  }
  std::vector<track::Span> spans;
  for (const auto& r : refs) {
    spans.push_back(prep::truncate_tokens(prep::cut_span(videos[r.video], r.start, c.span_length), mc.token_cap,
                                          mc.include_objects));
  }
  return spans;
}

template <typename Real>
TraceRecord batch_losses(Graph<Real>& g, std::span<const track::Span> spans, std::span<const std::size_t> partner,
                         ObjectTransformer<Real>& model, const PretrainConfig& c, Mode mode, StepRngs& r,
                         Var<Real>& total) {
  const bool include_objects = model.config().include_objects;
  FeaturePool pool;
  for (std::size_t i = 0; i < spans.size(); ++i) pool.add_span(i, spans[i], include_objects);

  std::vector<Var<Real>> preds;
  std::vector<Tensor<Real>> targets;
  std::size_t masked_rows = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    CorruptedExample<Real> ex;
    try {
      ex = select_and_corrupt(g, spans[i], model, mode, r.mask, r.slot, c.mask_fraction, &pool, i);
    } catch (const DataError&) {
      continue;  // nothing maskable in this span
    }
    Var<Real> h = model::encode(ex.tokens, model, mode, r.dropout);
    preds.push_back(model::head_mask(num::select_rows(h, std::span<const std::size_t>(ex.masked_rows)), model));
    masked_rows += ex.targets.rows();
    targets.push_back(std::move(ex.targets));
  }
  if (preds.empty()) throw DataError("pretraining batch has no maskable instance");

  const std::size_t d = model.config().d_label;
  Tensor<Real> all_targets(Shape{masked_rows, d});
  std::size_t off = 0;
  for (const auto& t : targets) {
    std::copy(t.data().begin(), t.data().end(), all_targets.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += t.numel();
  }
  Var<Real> mloss = masked_loss(num::concat_rows<Real>(preds), all_targets);

  TraceRecord rec;
  rec.mask_loss = static_cast<double>(mloss.value()[0]);
  total = mloss;
  if (c.objective == Objective::kMaskCompat) {
    std::vector<Var<Real>> rows;
    for (const auto& span : spans) {
      auto tokens = model::embed_tokens(g, span, model, mode, r.slot);
      rows.push_back(model::head_compat(model::cls_row(model::encode(tokens, model, mode, r.dropout)), model, mode,
                                        r.dropout));
    }
    Var<Real> closs = infonce_batch(num::concat_rows<Real>(rows), partner);
    rec.compat_loss = static_cast<double>(closs.value()[0]);
    total = num::add(total, closs);
  }
  rec.total = static_cast<double>(total.value()[0]);
  return rec;
}

StepRngs make_rngs(std::uint64_t seed) {
  const num::SeedSequence s(seed);
  return {s.stream("batch"), s.stream("mask"), s.stream("instance"), s.stream("dropout")};
}

}  // namespace

template <typename Real>
std::vector<TraceRecord> pretrain_loop(std::span<const track::Video> videos, ObjectTransformer<Real>& model,
                                       const PretrainConfig& c,
                                       const std::function<void(const TraceRecord&)>& on_step) {
  if (videos.empty()) throw DataError("pretraining needs at least one video");
  if (c.batch == 0) throw ConfigError("batch must be positive");
  StepRngs r = make_rngs(c.seed);
  num::AdamState<Real> adam(model.registry(), c.weight_decay);
  std::vector<TraceRecord> trace;
  trace.reserve(c.iterations);
  std::vector<std::size_t> partner;
  for (std::size_t step = 0; step < c.iterations; ++step) {
    const auto spans = draw_spans(videos, c, model.config(), r.batch, partner);
    Graph<Real> g;
    Var<Real> total;
    TraceRecord rec = batch_losses<Real>(g, spans, partner, model, c, Mode::kTrain, r, total);
    rec.step = step;
    rec.lr = num::lr_schedule(step, c.iterations, c.base_lr, c.warmup_frac);
    model.registry().zero_grad();
    g.backward(total);
    num::adam_step(model.registry(), adam, rec.lr);
    if (on_step) on_step(rec);
    trace.push_back(rec);
  }
  return trace;
}

template <typename Real>
TraceRecord evaluate_batch(std::span<const track::Video> videos, ObjectTransformer<Real>& model,
                           const PretrainConfig& c, std::uint64_t batch_seed) {
  StepRngs r = make_rngs(batch_seed);
  std::vector<std::size_t> partner;
  const auto spans = draw_spans(videos, c, model.config(), r.batch, partner);
  Graph<Real> g;
  Var<Real> total;
  return batch_losses<Real>(g, spans, partner, model, c, Mode::kEval, r, total);
}

#define OBJTX_INSTANTIATE_PRETRAIN(R)                                                                      \
  template CorruptedExample<R> select_and_corrupt(Graph<R>&, const track::Span&, ObjectTransformer<R>&, Mode, \
                                                  Rng&, Rng&, double, const FeaturePool*, std::size_t);   \
  template Var<R> masked_loss(Var<R>, const Tensor<R>&);                                                  \
  template Var<R> infonce_loss(Var<R>, Var<R>, Var<R>);                                                   \
  template Var<R> infonce_batch(Var<R>, std::span<const std::size_t>);                                    \
  template Var<R> infonce_per_anchor(Var<R>, std::span<const std::size_t>);                               \
  template std::vector<TraceRecord> pretrain_loop(std::span<const track::Video>, ObjectTransformer<R>&,   \
                                                  const PretrainConfig&,                                  \
                                                  const std::function<void(const TraceRecord&)>&);        \
  template TraceRecord evaluate_batch(std::span<const track::Video>, ObjectTransformer<R>&,               \
                                      const PretrainConfig&, std::uint64_t);

OBJTX_INSTANTIATE_PRETRAIN(float)
OBJTX_INSTANTIATE_PRETRAIN(double)

#undef OBJTX_INSTANTIATE_PRETRAIN

}  // namespace objtx::pretrain
