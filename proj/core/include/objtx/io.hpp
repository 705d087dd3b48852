#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "objtx/finetune.hpp"
#include "objtx/model.hpp"
#include "objtx/preprocess.hpp"
#include "objtx/pretrain.hpp"
#include "objtx/synthetic.hpp"
#include "objtx/track_model.hpp"

namespace objtx::io {

// Corpus: one JSON object per line. Records appear in reference order:
// a video, then its shots, tracks, detections and labels.

void write_corpus(std::ostream& out, const track::Corpus& corpus);
void save_corpus(const std::filesystem::path& path, const track::Corpus& corpus);

/// Parses and validates every video. Throws LoadError naming the offending
/// line for malformed JSON, missing fields, dangling references and
/// track-model invariant violations.
track::Corpus read_corpus(std::istream& in);
track::Corpus load_corpus(const std::filesystem::path& path);

/// Unlinked detections and frame signatures of one video, the input of the
/// preprocessing pipeline.
struct RawVideo {
  std::int64_t video_id = 0;
  std::int64_t movie_id = 0;
  std::int64_t segment_id = 0;
  double duration = 0.0;
  prep::RawDetectionStream frames;
  std::vector<prep::FrameSignature> signatures;
};

struct RawCorpus {
  std::vector<RawVideo> videos;
  std::vector<track::Label> labels;  // video-level only
};

void save_raw(const std::filesystem::path& path, const RawCorpus& raw);
RawCorpus load_raw(const std::filesystem::path& path);

// Checkpoints: "OBJTX1", the key-sorted config block, every registry entry
// as (name, shape, little-endian scalars), then an FNV-1a-64 checksum of all
// preceding bytes.

template <typename Real>
void write_checkpoint(std::ostream& out, const model::ObjectTransformer<Real>& model);

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const model::ObjectTransformer<Real>& model);

/// Rebuilds the model (including task head and fusion layer when present)
/// and restores every scalar bit-exactly. Throws LoadError on a bad magic,
/// checksum, dtype or shape.
template <typename Real>
model::ObjectTransformer<Real> read_checkpoint(std::istream& in);

template <typename Real>
model::ObjectTransformer<Real> load_checkpoint(const std::filesystem::path& path);

/// Flat key=value settings. Blank lines and lines starting with '#' are
/// ignored. Keys are "section.field", e.g. model.hidden or pretrain.iterations.
class Config {
 public:
  Config() = default;
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  /// Canonical text: one key=value per line, keys sorted.
  std::string str() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_list(const std::string& key, const std::vector<std::size_t>& fallback) const;

  /// Throws ConfigError naming the first key no getter has asked for.
  void check_all_used() const;

 private:
  const std::string* find(const std::string& key) const;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

model::ModelConfig model_config(const Config& c, const model::ModelConfig& base = {});
synth::GenConfig gen_config(const Config& c, const synth::GenConfig& base = {});
pretrain::PretrainConfig pretrain_config(const Config& c, const pretrain::PretrainConfig& base = {});
finetune::FinetuneConfig finetune_config(const Config& c, const finetune::FinetuneConfig& base = {});
finetune::FusionConfig fusion_config(const Config& c, const finetune::FusionConfig& base = {});

/// model.* keys of every ModelConfig field.
Config to_config(const model::ModelConfig& m);

/// Line-delimited metric records {"step"|"split", "metric", "value"} plus
/// optional integer context fields.
class MetricsLog {
 public:
  explicit MetricsLog(std::ostream& out) : out_(&out) {}
  void step(std::size_t step, std::string_view metric, double value);
  void split(std::string_view split, std::string_view metric, double value,
             const std::map<std::string, std::int64_t>& context = {});

 private:
  std::ostream* out_;
};

}  // namespace objtx::io
