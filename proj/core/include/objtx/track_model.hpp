#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace objtx::track {

enum class SourceClass { kPerson, kObject };

std::string_view to_string(SourceClass c);
SourceClass parse_source_class(std::string_view s);

/// Normalized box corners; every coordinate lies in [0, 1].
struct Box {
  double top = 0.0;
  double bottom = 1.0;
  double left = 0.0;
  double right = 1.0;

  double area() const noexcept { return (bottom - top) * (right - left); }
  friend bool operator==(const Box&, const Box&) = default;
};

/// One appearance of an instance in one frame.
struct Detection {
  double t = 0.0;  // seconds from the start of the enclosing span or video
  Box box;
  std::vector<double> z;
  std::optional<std::vector<double>> pseudo_label;
  SourceClass source_class = SourceClass::kPerson;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// An instance: time-ordered detections sharing one identity inside one shot.
struct Track {
  std::int64_t track_id = 0;
  std::int64_t shot_id = 0;
  std::vector<Detection> detections;

  SourceClass source_class() const { return detections.front().source_class; }
  friend bool operator==(const Track&, const Track&) = default;
};

/// Half-open time interval [start, end) of one shot.
struct ShotInterval {
  std::int64_t shot_id = 0;
  double start = 0.0;
  double end = 0.0;

  bool contains(double t) const noexcept { return t >= start && t < end; }
  friend bool operator==(const ShotInterval&, const ShotInterval&) = default;
};

/// A whole source video. Detection times are seconds from the video start.
struct Video {
  std::int64_t video_id = 0;
  std::int64_t movie_id = 0;
  std::int64_t segment_id = 0;
  double duration = 0.0;
  std::vector<ShotInterval> shots;
  std::vector<Track> tracks;

  friend bool operator==(const Video&, const Video&) = default;
};

/// Fixed-length window of a video; the unit the model consumes. Detection and
/// shot times are relative to `start_time`.
struct Span {
  std::int64_t video_id = 0;
  std::int64_t segment_id = 0;
  double start_time = 0.0;
  double length = 60.0;
  bool truncated = false;  // video was shorter than the requested length
  std::vector<ShotInterval> shots;
  std::vector<Track> tracks;

  friend bool operator==(const Span&, const Span&) = default;
};

/// First violated invariant and the path of the offending record,
/// e.g. "tracks[2].detections[0].box".
struct Violation {
  std::string message;
  std::string path;
};

/// Supervision attached to a video (task label) or to one of its tracks
/// (per-instance label, e.g. the AVA-style role task with external scores).
struct Label {
  std::int64_t video_id = 0;
  std::optional<std::int64_t> track_id;
  std::string task;
  double value = 0.0;
  std::vector<double> scores;  // optional per-class scores
  friend bool operator==(const Label&, const Label&) = default;
};

struct Corpus {
  std::vector<Video> videos;
  std::vector<Label> labels;

  const Video& video(std::int64_t video_id) const;
  /// Video-level label; throws UsageError when absent.
  const Label& label(std::int64_t video_id, std::string_view task) const;
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

std::optional<Violation> validate_span(const Span& span);
std::optional<Violation> validate_video(const Video& video);

/// Detections that become tokens (persons, plus objects when requested)
/// plus one for the [CLS] token.
std::size_t count_tokens(const Span& span, bool include_objects);

inline bool is_tokenized(const Track& t, bool include_objects) {
  return include_objects || t.source_class() == SourceClass::kPerson;
}

}  // namespace objtx::track
