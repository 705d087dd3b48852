#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "objtx/preprocess.hpp"
#include "objtx/track_model.hpp"

namespace objtx::synth {

/// Generator settings. The first four instances of every segment are
/// characters (persons with role pseudo-labels); the rest are objects.
struct GenConfig {
  std::size_t n_movies = 40;
  std::size_t segments_per_movie = 4;
  double segment_length_s = 120.0;
  std::size_t instances_per_segment = 6;
  std::size_t detections_per_instance = 4;
  std::size_t d_z = 64;
  std::size_t d_label = 12;
  std::size_t theme_dim = 8;
  std::size_t n_themes = 4;
  double noise_scale = 0.5;
  double theme_scale = 1.0;
  // Role prototypes: radius of the shared circle roles are spaced on (role r
  // at angle 2*pi*r/d_label) plus a per-role random residual of unit scale.
  double role_circle = 3.0;
  double advance_prob = 1.0;
  double label_smoothing = 0.05;
  // Short-term scores for the per-track role task: margin on the true class
  // plus unit gaussian noise on every class.
  double short_term_margin = 2.0;
  std::size_t min_shot_s = 12;
  std::size_t max_shot_s = 18;
  bool split_tracks_at_shots = true;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::size_t kCharacters = 4;

// Task names used in label records.
inline constexpr std::string_view kTaskTheme = "theme";              // tier (a), n_themes classes
inline constexpr std::string_view kTaskHarmony = "harmony";          // tier (b), binary
inline constexpr std::string_view kTaskDirection = "direction";      // tier (c), binary
inline constexpr std::string_view kTaskThemeScore = "theme_score";   // regression
inline constexpr std::string_view kTaskRole = "role";                // per-track, d_label classes

/// Hidden state of one segment.
struct LatentScript {
  std::int64_t video_id = 0;
  std::size_t theme_class = 0;
  std::vector<double> theme;  // theme_dim
  double theme_score = 0.0;
  bool harmonious = false;
  int direction = 1;  // +1 or -1
  // pairs[p] = {left character, right character}; shot k shows pairs[(k + first_pair) % 2].
  std::array<std::array<std::size_t, 2>, 2> pairs{};
  std::size_t first_pair = 0;
  std::vector<track::ShotInterval> shots;
  // roles[c][k]: role of character c at its k-th appearance.
  std::vector<std::vector<std::size_t>> roles;
  // Per generated track: the character (or kCharacters + object index) and role.
  struct TrackTruth {
    std::int64_t track_id = 0;
    std::size_t instance = 0;
    std::size_t role = 0;  // meaningless for objects
    bool is_object = false;
  };
  std::vector<TrackTruth> tracks;
};

struct GeneratedCorpus {
  GenConfig config;
  track::Corpus corpus;
  std::vector<LatentScript> scripts;  // aligned with corpus.videos
  std::vector<std::vector<double>> role_prototypes;
  std::vector<std::vector<double>> object_prototypes;
  std::vector<std::vector<double>> theme_prototypes;
};

GeneratedCorpus generate_corpus(const GenConfig& config);

/// Questions answerable from the latent script.
struct OracleQuery {
  enum class Kind { kRoleDistribution, kCompatible, kTaskLabel } kind = Kind::kTaskLabel;
  std::int64_t video_id = 0;
  std::int64_t track_id = 0;        // kRoleDistribution
  std::int64_t other_video_id = 0;  // kCompatible
  std::string task;                 // kTaskLabel
};

struct OracleAnswer {
  std::vector<double> distribution;
  bool compatible = false;
  double value = 0.0;
};

/// Throws UsageError for unknown videos, tracks or tasks.
OracleAnswer oracle_predict(const GeneratedCorpus& gen, const OracleQuery& query);

/// Unlinked per-frame detections of a video (frame order shuffled within
/// each frame), the input link_tracks expects.
prep::RawDetectionStream render_raw_stream(const track::Video& video, std::uint64_t seed);

/// One signature per second; each shot has its own histogram, consecutive
/// shots differ by more than 0.5 in half-L1 distance.
std::vector<prep::FrameSignature> render_signatures(const track::Video& video, std::uint64_t seed,
                                                    std::size_t bins = 16);

}  // namespace objtx::synth
