#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "objtx/numerics/graph.hpp"
#include "objtx/numerics/ops.hpp"
#include "objtx/numerics/rng.hpp"
#include "objtx/track_model.hpp"

namespace objtx::model {

using num::Graph;
using num::Mode;
using num::Rng;
using num::Tensor;
using num::Var;

/// Architecture hyperparameters. Defaults are the full-size encoder; the
/// experiments and tests shrink hidden/heads/layers.
struct ModelConfig {
  std::size_t hidden = 768;
  std::size_t layers = 3;
  std::size_t heads = 12;
  std::size_t head_dim = 64;
  std::size_t ffn_dim = 3072;
  double dropout = 0.1;
  std::size_t n_instance_slots = 64;
  std::size_t n_shot_slots = 32;
  std::size_t d_label = 12;
  std::size_t d_z = 64;
  std::size_t token_cap = 256;
  bool include_objects = false;
  // Width of the hidden layer of the mask head; 0 means `hidden`.
  std::size_t mask_hidden = 0;
  // Optional heads; 0 leaves them unregistered.
  std::size_t task_outputs = 0;
  std::size_t fusion_inputs = 0;  // short-term score count for late fusion

  std::size_t mask_width() const { return mask_hidden ? mask_hidden : hidden; }
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

/// Registry indices of every model tensor.
struct ModelParams {
  std::size_t w_feat, w_spatial, bias, w_pos, e_instance, e_shot, e_cls, z_mask;
  struct Layer {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln1_gamma, ln1_beta;
    std::size_t w1, b1, w2, b2;
    std::size_t ln2_gamma, ln2_beta;
  };
  std::vector<Layer> layers;
  std::size_t mask_w1, mask_b1, mask_w2, mask_b2;
  std::size_t compat_w, compat_b;
  static constexpr std::size_t kAbsent = std::numeric_limits<std::size_t>::max();
  std::size_t task_w = kAbsent, task_b = kAbsent;
  std::size_t fusion_w = kAbsent, fusion_b = kAbsent;
};

/// Parameters plus configuration. A value type: copying yields an
/// independent model.
template <typename Real>
class ObjectTransformer {
 public:
  /// Registers every tensor and initializes weights from `init_seed`:
  /// truncated normal (std 0.02) for matrices and embedding tables, zeros for
  /// biases and layer-norm beta, ones for layer-norm gamma.
  ObjectTransformer(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const noexcept { return config_; }
  const ModelParams& ids() const noexcept { return ids_; }
  num::ParamRegistry<Real>& registry() noexcept { return registry_; }
  const num::ParamRegistry<Real>& registry() const noexcept { return registry_; }
  num::Parameter<Real>& param(std::size_t idx) { return registry_[idx]; }

  /// Registers (or re-initializes with a new width) the end-task head.
  void set_task_head(std::size_t outputs, std::uint64_t init_seed);
  /// Registers the late-fusion layer mapping [mask-head hidden ; short-term
  /// scores] to `short_term_dim` scores.
  void set_fusion_layer(std::size_t short_term_dim, std::uint64_t init_seed);

 private:
  void init_tensor(std::size_t idx, Rng& rng);
  std::size_t add_matrix(const std::string& name, std::size_t rows, std::size_t cols, bool decay);
  std::size_t add_vector(const std::string& name, std::size_t n);

  ModelConfig config_;
  num::ParamRegistry<Real> registry_;
  ModelParams ids_;
};

inline constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

/// Provenance of one token. Token 0 is [CLS]; padding tokens have
/// track_index == kNone and is_cls == false.
struct TokenRef {
  bool is_cls = false;
  std::size_t track_index = kNone;
  std::int64_t track_id = -1;
  std::size_t detection_index = kNone;
  bool masked = false;
};

template <typename Real>
struct TokenSequence {
  Var<Real> embeddings;                      // n_tokens x hidden
  std::vector<std::uint8_t> attention_mask;  // 1 = real token
  std::vector<TokenRef> provenance;
  std::vector<std::size_t> instance_slot;    // kNone for [CLS]/padding
  std::vector<std::size_t> shot_slot;

  std::size_t size() const noexcept { return provenance.size(); }
};

enum class CorruptionMode { kLearnedReplace, kRandomFeature, kKeep };

std::string_view to_string(CorruptionMode m);

/// Feature substitution for every token of one instance.
struct InstanceCorruption {
  std::int64_t track_id = 0;
  CorruptionMode mode = CorruptionMode::kLearnedReplace;
  std::vector<double> replacement;  // used by kRandomFeature
};

/// (t - start, start + length - t, t - (start + length / 2)) / length.
std::array<double, 3> temporal_features(double t, double span_start, double span_length);

/// Linear map of the temporal features through w_pos [3 x hidden].
template <typename Real>
Tensor<Real> temporal_embedding(double t, double span_start, double span_length,
                                const Tensor<Real>& w_pos);

/// Instance slot assignment: canonical order of first appearance in eval
/// mode, a fresh uniform injection into the slot table in train mode.
/// Indexed like span.tracks; kNone for tracks that are not tokenized.
std::vector<std::size_t> assign_instance_slots(const track::Span& span, const ModelConfig& config,
                                               Mode mode, Rng& rng);

/// Builds the input sequence: [CLS] followed by one token per tokenized
/// detection (tracks in span order, detections in time order), each
///   y = z W_feat + s W_spatial + E_temporal(t) + E_instance[pi(u)] + E_shot[sigma(c_u)] + b.
template <typename Real>
TokenSequence<Real> embed_tokens(Graph<Real>& g, const track::Span& span,
                                 ObjectTransformer<Real>& model, Mode mode, Rng& rng,
                                 std::span<const InstanceCorruption> corruptions = {});

/// Same as embed_tokens with explicit slot assignment (indexed like span.tracks).
template <typename Real>
TokenSequence<Real> embed_tokens_with_slots(Graph<Real>& g, const track::Span& span,
                                            ObjectTransformer<Real>& model,
                                            std::span<const std::size_t> instance_slots,
                                            std::span<const InstanceCorruption> corruptions = {});

/// Appends `count` padding tokens (zero embeddings, attention mask 0).
template <typename Real>
TokenSequence<Real> pad_tokens(const TokenSequence<Real>& tokens, std::size_t count);

/// Scaled dot-product attention softmax(Q K^T / sqrt(d)) V over keys with
/// key_mask == 1. Throws UsageError when every key is masked.
template <typename Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v, std::span<const std::uint8_t> key_mask,
                    double dropout, Mode mode, Rng& rng);

/// Post-LN encoder stack; returns n_tokens x hidden.
template <typename Real>
Var<Real> encode(const TokenSequence<Real>& tokens, ObjectTransformer<Real>& model, Mode mode,
                 Rng& rng);

/// Row 0 of the encoder output.
template <typename Real>
Var<Real> cls_row(Var<Real> hidden);

template <typename Real>
Var<Real> head_task(Var<Real> v_cls, ObjectTransformer<Real>& model, Mode mode, Rng& rng);

/// First layer plus gelu of the mask head.
template <typename Real>
Var<Real> head_mask_hidden(Var<Real> rows, ObjectTransformer<Real>& model);

/// Class distribution per input row.
template <typename Real>
Var<Real> head_mask(Var<Real> rows, ObjectTransformer<Real>& model);

template <typename Real>
Var<Real> head_compat(Var<Real> v_cls, ObjectTransformer<Real>& model, Mode mode, Rng& rng);

extern template class ObjectTransformer<float>;
extern template class ObjectTransformer<double>;

}  // namespace objtx::model
