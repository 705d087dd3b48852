#include "objtx/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "objtx/errors.hpp"

namespace objtx::model {

using num::Shape;

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(hidden, "hidden");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(head_dim, "head_dim");
  positive(ffn_dim, "ffn_dim");
  positive(n_instance_slots, "n_instance_slots");
  positive(n_shot_slots, "n_shot_slots");
  positive(d_label, "d_label");
  positive(d_z, "d_z");
  if (heads * head_dim != hidden) {
    throw ConfigError("heads * head_dim (" + std::to_string(heads * head_dim) +
                      ") must equal hidden (" + std::to_string(hidden) + ")");
  }
  if (hidden < 2) throw ConfigError("hidden must be at least 2 for layer norm");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (token_cap < 2) throw ConfigError("token_cap must be at least 2");
}

std::string_view to_string(CorruptionMode m) {
  switch (m) {
    case CorruptionMode::kLearnedReplace: return "learned-replace";
    case CorruptionMode::kRandomFeature: return "random-feature";
    case CorruptionMode::kKeep: return "keep";
  }
  return "?";
}

template <typename Real>
std::size_t ObjectTransformer<Real>::add_matrix(const std::string& name, std::size_t rows,
                                                std::size_t cols, bool decay) {
  return registry_.add(name, Shape{rows, cols}, decay);
}

template <typename Real>
std::size_t ObjectTransformer<Real>::add_vector(const std::string& name, std::size_t n) {
  return registry_.add(name, Shape{n}, false);
}

template <typename Real>
void ObjectTransformer<Real>::init_tensor(std::size_t idx, Rng& rng) {
  auto& p = registry_[idx];
  const std::string& n = p.name;
  const bool is_gamma = n.ends_with(".gamma");
  const bool is_zero = n.ends_with(".beta") || n.ends_with("_b") || n.ends_with(".bias") ||
                       n.ends_with(".b") || n.ends_with(".b1") || n.ends_with(".b2") ||
                       n.ends_with(".bq") || n.ends_with(".bk") || n.ends_with(".bv") ||
                       n.ends_with(".bo");
  for (auto& x : p.value.data()) {
    x = is_gamma ? Real(1) : is_zero ? Real(0) : Real(num::truncated_normal(rng, 0.02));
  }
}

template <typename Real>
ObjectTransformer<Real>::ObjectTransformer(ModelConfig config, std::uint64_t init_seed)
    : config_(config) {
  config_.validate();
  const auto& c = config_;
  const std::size_t h = c.hidden;

  ids_.w_feat = add_matrix("embed.w_feat", c.d_z, h, true);
  ids_.w_spatial = add_matrix("embed.w_spatial", 4, h, true);
  ids_.bias = add_vector("embed.bias", h);
  ids_.w_pos = add_matrix("embed.w_pos", 3, h, true);
  ids_.e_instance = add_matrix("embed.instance", c.n_instance_slots, h, false);
  ids_.e_shot = add_matrix("embed.shot", c.n_shot_slots, h, false);
  ids_.e_cls = add_matrix("embed.cls", 1, h, false);
  ids_.z_mask = add_matrix("embed.z_mask", 1, c.d_z, false);

  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    ModelParams::Layer L{};
    L.wq = add_matrix(p + "attn.wq", h, h, true);
    L.bq = add_vector(p + "attn.bq", h);
    L.wk = add_matrix(p + "attn.wk", h, h, true);
    L.bk = add_vector(p + "attn.bk", h);
    L.wv = add_matrix(p + "attn.wv", h, h, true);
    L.bv = add_vector(p + "attn.bv", h);
    L.wo = add_matrix(p + "attn.wo", h, h, true);
    L.bo = add_vector(p + "attn.bo", h);
    L.ln1_gamma = add_vector(p + "ln1.gamma", h);
    L.ln1_beta = add_vector(p + "ln1.beta", h);
    L.w1 = add_matrix(p + "ffn.w1", h, c.ffn_dim, true);
    L.b1 = add_vector(p + "ffn.b1", c.ffn_dim);
    L.w2 = add_matrix(p + "ffn.w2", c.ffn_dim, h, true);
    L.b2 = add_vector(p + "ffn.b2", h);
    L.ln2_gamma = add_vector(p + "ln2.gamma", h);
    L.ln2_beta = add_vector(p + "ln2.beta", h);
    ids_.layers.push_back(L);
  }

  ids_.mask_w1 = add_matrix("head.mask.w1", h, c.mask_width(), true);
  ids_.mask_b1 = add_vector("head.mask.b1", c.mask_width());
  ids_.mask_w2 = add_matrix("head.mask.w2", c.mask_width(), c.d_label, true);
  ids_.mask_b2 = add_vector("head.mask.b2", c.d_label);
  ids_.compat_w = add_matrix("head.compat.w", h, h, true);
  ids_.compat_b = add_vector("head.compat.b", h);

  Rng rng = num::SeedSequence(init_seed).stream("init");
  for (std::size_t i = 0; i < registry_.size(); ++i) init_tensor(i, rng);

  if (c.task_outputs) set_task_head(c.task_outputs, init_seed);
  if (c.fusion_inputs) set_fusion_layer(c.fusion_inputs, init_seed);
}

template <typename Real>
void ObjectTransformer<Real>::set_task_head(std::size_t outputs, std::uint64_t init_seed) {
  if (outputs == 0) throw ConfigError("task head needs at least one output");
  config_.task_outputs = outputs;
  if (ids_.task_w == ModelParams::kAbsent) {
    ids_.task_w = add_matrix("head.task.w", config_.hidden, outputs, true);
    ids_.task_b = add_vector("head.task.b", outputs);
  } else {
    registry_[ids_.task_w].value = Tensor<Real>(Shape{config_.hidden, outputs});
    registry_[ids_.task_w].grad = Tensor<Real>(Shape{config_.hidden, outputs});
    registry_[ids_.task_b].value = Tensor<Real>(Shape{outputs});
    registry_[ids_.task_b].grad = Tensor<Real>(Shape{outputs});
  }
  Rng rng = num::SeedSequence(init_seed).stream("init.task");
  init_tensor(ids_.task_w, rng);
  init_tensor(ids_.task_b, rng);
}

template <typename Real>
void ObjectTransformer<Real>::set_fusion_layer(std::size_t short_term_dim, std::uint64_t init_seed) {
  if (short_term_dim == 0) throw ConfigError("fusion layer needs short-term scores");
  if (ids_.fusion_w != ModelParams::kAbsent) {
    throw UsageError("fusion layer already registered");
  }
  config_.fusion_inputs = short_term_dim;
  ids_.fusion_w = add_matrix("fusion.w", config_.mask_width() + short_term_dim, short_term_dim, true);
  ids_.fusion_b = add_vector("fusion.b", short_term_dim);
  Rng rng = num::SeedSequence(init_seed).stream("init.fusion");
  init_tensor(ids_.fusion_w, rng);
  init_tensor(ids_.fusion_b, rng);
}

std::array<double, 3> temporal_features(double t, double span_start, double span_length) {
  if (!(span_length > 0.0)) throw UsageError("temporal_features: span length must be positive");
  if (t < span_start || t > span_start + span_length) {
    throw UsageError("temporal_features: t=" + std::to_string(t) + " lies outside the span");
  }
  return {(t - span_start) / span_length, (span_start + span_length - t) / span_length,
          (t - (span_start + span_length / 2.0)) / span_length};
}

template <typename Real>
Tensor<Real> temporal_embedding(double t, double span_start, double span_length,
                                const Tensor<Real>& w_pos) {
  if (w_pos.rank() != 2 || w_pos.rows() != 3) throw DimensionError("w_pos must be 3 x hidden");
  const auto f = temporal_features(t, span_start, span_length);
  Tensor<Real> out(Shape{w_pos.cols()});
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t c = 0; c < w_pos.cols(); ++c) out[c] += Real(f[k]) * w_pos(k, c);
  return out;
}

std::vector<std::size_t> assign_instance_slots(const track::Span& span, const ModelConfig& config,
                                               Mode mode, Rng& rng) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < span.tracks.size(); ++i) {
    if (track::is_tokenized(span.tracks[i], config.include_objects)) order.push_back(i);
  }
  if (order.size() > config.n_instance_slots) {
    throw CapacityError("span has " + std::to_string(order.size()) + " instances but only " +
                        std::to_string(config.n_instance_slots) + " instance slots");
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ta = span.tracks[a];
    const auto& tb = span.tracks[b];
    if (ta.detections.front().t != tb.detections.front().t)
      return ta.detections.front().t < tb.detections.front().t;
    return ta.track_id < tb.track_id;
  });

  std::vector<std::size_t> slots(span.tracks.size(), kNone);
  if (mode == Mode::kEval) {
    for (std::size_t k = 0; k < order.size(); ++k) slots[order[k]] = k;
    return slots;
  }
  // Partial Fisher-Yates: the first order.size() entries are a uniform
  // injection into the slot table.
  std::vector<std::size_t> pool(config.n_instance_slots);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t j = k + num::uniform_index(rng, pool.size() - k);
    std::swap(pool[k], pool[j]);
    slots[order[k]] = pool[k];
  }
  return slots;
}

template <typename Real>
TokenSequence<Real> embed_tokens(Graph<Real>& g, const track::Span& span,
                                 ObjectTransformer<Real>& model, Mode mode, Rng& rng,
                                 std::span<const InstanceCorruption> corruptions) {
  const auto slots = assign_instance_slots(span, model.config(), mode, rng);
  return embed_tokens_with_slots(g, span, model, slots, corruptions);
}

template <typename Real>
TokenSequence<Real> embed_tokens_with_slots(Graph<Real>& g, const track::Span& span,
                                            ObjectTransformer<Real>& model,
                                            std::span<const std::size_t> instance_slots,
                                            std::span<const InstanceCorruption> corruptions) {
  const ModelConfig& cfg = model.config();
  const ModelParams& ids = model.ids();
  const std::size_t n_tokens = track::count_tokens(span, cfg.include_objects);
  if (n_tokens > cfg.token_cap) {
    throw UsageError("span has " + std::to_string(n_tokens) + " tokens, cap is " +
                     std::to_string(cfg.token_cap) + "; truncate first");
  }
  if (span.shots.size() > cfg.n_shot_slots) {
    throw CapacityError("span has " + std::to_string(span.shots.size()) + " shots but only " +
                        std::to_string(cfg.n_shot_slots) + " shot slots");
  }
  if (instance_slots.size() != span.tracks.size()) {
    throw UsageError("embed_tokens: one slot entry per track required");
  }

  TokenSequence<Real> seq;
  seq.provenance.push_back(TokenRef{.is_cls = true});
  seq.instance_slot.push_back(kNone);
  seq.shot_slot.push_back(kNone);

  const std::size_t n = n_tokens - 1;
  Var<Real> cls = g.param(model.param(ids.e_cls));
  if (n == 0) {
    seq.embeddings = cls;
    seq.attention_mask.assign(1, 1);
    return seq;
  }

  Tensor<Real> z(Shape{n, cfg.d_z});
  Tensor<Real> s(Shape{n, 4});
  Tensor<Real> tf(Shape{n, 3});
  Tensor<Real> replace_ind(Shape{n, 1});
  bool any_replace = false;
  std::vector<std::size_t> inst_rows, shot_rows;

  std::size_t row = 0;
  for (std::size_t i = 0; i < span.tracks.size(); ++i) {
    const track::Track& tr = span.tracks[i];
    if (!track::is_tokenized(tr, cfg.include_objects)) continue;
    if (instance_slots[i] >= cfg.n_instance_slots) throw CapacityError("instance slot out of range");

    std::size_t shot_slot = 0;
    if (!span.shots.empty()) {
      auto it = std::find_if(span.shots.begin(), span.shots.end(),
                             [&](const track::ShotInterval& sh) { return sh.shot_id == tr.shot_id; });
      if (it == span.shots.end()) {
        throw DataError("track " + std::to_string(tr.track_id) + " refers to a shot not in the span");
      }
      shot_slot = static_cast<std::size_t>(it - span.shots.begin());
    }

    const InstanceCorruption* corr = nullptr;
    for (const auto& c : corruptions) {
      if (c.track_id == tr.track_id) corr = &c;
    }

    for (std::size_t j = 0; j < tr.detections.size(); ++j, ++row) {
      const track::Detection& d = tr.detections[j];
      const std::vector<double>* feat = &d.z;
      if (corr && corr->mode == CorruptionMode::kRandomFeature) feat = &corr->replacement;
      const bool learned = corr && corr->mode == CorruptionMode::kLearnedReplace;
      if (!learned) {
        if (feat->size() != cfg.d_z) {
          throw DimensionError("feature has " + std::to_string(feat->size()) + " dims, model expects " +
                               std::to_string(cfg.d_z));
        }
        for (std::size_t k = 0; k < cfg.d_z; ++k) z(row, k) = Real((*feat)[k]);
      } else {
        replace_ind[row] = Real(1);
        any_replace = true;
      }
      s(row, 0) = Real(d.box.top);
      s(row, 1) = Real(d.box.bottom);
      s(row, 2) = Real(d.box.left);
      s(row, 3) = Real(d.box.right);
      const auto f = temporal_features(d.t, 0.0, span.length);
      for (std::size_t k = 0; k < 3; ++k) tf(row, k) = Real(f[k]);

      inst_rows.push_back(instance_slots[i]);
      shot_rows.push_back(shot_slot);
      seq.provenance.push_back(TokenRef{.is_cls = false,
                                        .track_index = i,
                                        .track_id = tr.track_id,
                                        .detection_index = j,
                                        .masked = corr != nullptr});
      seq.instance_slot.push_back(instance_slots[i]);
      seq.shot_slot.push_back(shot_slot);
    }
  }

  Var<Real> zin = g.constant(std::move(z));
  if (any_replace) {
    zin = num::add(zin, num::matmul(g.constant(std::move(replace_ind)), g.param(model.param(ids.z_mask))));
  }
  Var<Real> y = num::matmul(zin, g.param(model.param(ids.w_feat)));
  y = num::add(y, num::matmul(g.constant(std::move(s)), g.param(model.param(ids.w_spatial))));
  y = num::add(y, num::matmul(g.constant(std::move(tf)), g.param(model.param(ids.w_pos))));
  y = num::add(y, num::select_rows(g.param(model.param(ids.e_instance)), std::span<const std::size_t>(inst_rows)));
  y = num::add(y, num::select_rows(g.param(model.param(ids.e_shot)), std::span<const std::size_t>(shot_rows)));
  y = num::add(y, g.param(model.param(ids.bias)));

  const Var<Real> parts[] = {cls, y};
  seq.embeddings = num::concat_rows<Real>(parts);
  seq.attention_mask.assign(seq.provenance.size(), 1);
  return seq;
}

template <typename Real>
TokenSequence<Real> pad_tokens(const TokenSequence<Real>& tokens, std::size_t count) {
  if (count == 0) return tokens;
  TokenSequence<Real> out = tokens;
  Graph<Real>& g = *tokens.embeddings.graph;
  Var<Real> pad = g.constant(Tensor<Real>(Shape{count, tokens.embeddings.cols()}));
  const Var<Real> parts[] = {tokens.embeddings, pad};
  out.embeddings = num::concat_rows<Real>(parts);
  for (std::size_t i = 0; i < count; ++i) {
    out.attention_mask.push_back(0);
    out.provenance.push_back(TokenRef{});
    out.instance_slot.push_back(kNone);
    out.shot_slot.push_back(kNone);
  }
  return out;
}

template <typename Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v, std::span<const std::uint8_t> key_mask,
                    double dropout, Mode mode, Rng& rng) {
  if (q.cols() != k.cols()) throw DimensionError("attention: query/key widths differ");
  if (k.rows() != v.rows()) throw DimensionError("attention: key/value counts differ");
  const Real inv_sqrt = Real(1) / std::sqrt(Real(q.cols()));
  Var<Real> scores = num::scale(num::matmul_nt(q, k), inv_sqrt);
  Var<Real> probs = num::masked_softmax(scores, key_mask);
  probs = num::dropout(probs, dropout, mode, rng);
  return num::matmul(probs, v);
}

template <typename Real>
Var<Real> encode(const TokenSequence<Real>& tokens, ObjectTransformer<Real>& model, Mode mode,
                 Rng& rng) {
  const ModelConfig& cfg = model.config();
  Graph<Real>& g = *tokens.embeddings.graph;
  if (tokens.attention_mask.size() != tokens.embeddings.rows()) {
    throw DimensionError("encode: attention mask length differs from token count");
  }
  auto P = [&](std::size_t idx) { return g.param(model.param(idx)); };
  const std::span<const std::uint8_t> mask(tokens.attention_mask);

  Var<Real> x = tokens.embeddings;
  for (const auto& L : model.ids().layers) {
    Var<Real> q = num::linear(x, P(L.wq), P(L.bq));
    Var<Real> k = num::linear(x, P(L.wk), P(L.bk));
    Var<Real> v = num::linear(x, P(L.wv), P(L.bv));
    std::vector<Var<Real>> heads;
    heads.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::size_t off = h * cfg.head_dim;
      heads.push_back(attention(num::slice_cols(q, off, cfg.head_dim),
                                num::slice_cols(k, off, cfg.head_dim),
                                num::slice_cols(v, off, cfg.head_dim), mask, cfg.dropout, mode, rng));
    }
    Var<Real> ctx = cfg.heads == 1 ? heads[0] : num::concat_cols<Real>(heads);
    Var<Real> attn = num::dropout(num::linear(ctx, P(L.wo), P(L.bo)), cfg.dropout, mode, rng);
    x = num::layer_norm(num::add(x, attn), P(L.ln1_gamma), P(L.ln1_beta));

    Var<Real> f = num::linear(num::gelu(num::linear(x, P(L.w1), P(L.b1))), P(L.w2), P(L.b2));
    f = num::dropout(f, cfg.dropout, mode, rng);
    x = num::layer_norm(num::add(x, f), P(L.ln2_gamma), P(L.ln2_beta));
  }
  return x;
}

template <typename Real>
Var<Real> cls_row(Var<Real> hidden) {
  const std::size_t zero = 0;
  return num::select_rows(hidden, std::span<const std::size_t>(&zero, 1));
}

template <typename Real>
Var<Real> head_task(Var<Real> v_cls, ObjectTransformer<Real>& model, Mode mode, Rng& rng) {
  const auto& ids = model.ids();
  if (ids.task_w == ModelParams::kAbsent) throw UsageError("model has no task head");
  Graph<Real>& g = *v_cls.graph;
  Var<Real> x = num::dropout(v_cls, model.config().dropout, mode, rng);
  return num::linear(x, g.param(model.param(ids.task_w)), g.param(model.param(ids.task_b)));
}

template <typename Real>
Var<Real> head_mask_hidden(Var<Real> rows, ObjectTransformer<Real>& model) {
  const auto& ids = model.ids();
  Graph<Real>& g = *rows.graph;
  return num::gelu(num::linear(rows, g.param(model.param(ids.mask_w1)), g.param(model.param(ids.mask_b1))));
}

template <typename Real>
Var<Real> head_mask(Var<Real> rows, ObjectTransformer<Real>& model) {
  const auto& ids = model.ids();
  Graph<Real>& g = *rows.graph;
  Var<Real> h = head_mask_hidden(rows, model);
  return num::softmax(num::linear(h, g.param(model.param(ids.mask_w2)), g.param(model.param(ids.mask_b2))));
}

template <typename Real>
Var<Real> head_compat(Var<Real> v_cls, ObjectTransformer<Real>& model, Mode mode, Rng& rng) {
  const auto& ids = model.ids();
  Graph<Real>& g = *v_cls.graph;
  Var<Real> x = num::dropout(v_cls, model.config().dropout, mode, rng);
  return num::linear(x, g.param(model.param(ids.compat_w)), g.param(model.param(ids.compat_b)));
}

#define OBJTX_INSTANTIATE_MODEL(R)                                                               \
  template class ObjectTransformer<R>;                                                           \
  template Tensor<R> temporal_embedding(double, double, double, const Tensor<R>&);               \
  template TokenSequence<R> embed_tokens(Graph<R>&, const track::Span&, ObjectTransformer<R>&,   \
                                         Mode, Rng&, std::span<const InstanceCorruption>);       \
  template TokenSequence<R> embed_tokens_with_slots(Graph<R>&, const track::Span&,               \
                                                    ObjectTransformer<R>&,                       \
                                                    std::span<const std::size_t>,                \
                                                    std::span<const InstanceCorruption>);        \
  template TokenSequence<R> pad_tokens(const TokenSequence<R>&, std::size_t);                    \
  template Var<R> attention(Var<R>, Var<R>, Var<R>, std::span<const std::uint8_t>, double, Mode, \
                            Rng&);                                                               \
  template Var<R> encode(const TokenSequence<R>&, ObjectTransformer<R>&, Mode, Rng&);            \
  template Var<R> cls_row(Var<R>);                                                               \
  template Var<R> head_task(Var<R>, ObjectTransformer<R>&, Mode, Rng&);                          \
  template Var<R> head_mask_hidden(Var<R>, ObjectTransformer<R>&);                               \
  template Var<R> head_mask(Var<R>, ObjectTransformer<R>&);                                      \
  template Var<R> head_compat(Var<R>, ObjectTransformer<R>&, Mode, Rng&);

OBJTX_INSTANTIATE_MODEL(float)
OBJTX_INSTANTIATE_MODEL(double)

#undef OBJTX_INSTANTIATE_MODEL

}  // namespace objtx::model
