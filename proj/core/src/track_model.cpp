#include "objtx/track_model.hpp"

#include <cmath>
#include <span>

#include "objtx/errors.hpp"

namespace objtx::track {

std::string_view to_string(SourceClass c) {
  return c == SourceClass::kPerson ? "person" : "object";
}

SourceClass parse_source_class(std::string_view s) {
  if (s == "person") return SourceClass::kPerson;
  if (s == "object") return SourceClass::kObject;
  throw DataError("unknown source class '" + std::string(s) + "'");
}

namespace {

std::string track_path(std::size_t i) { return "tracks[" + std::to_string(i) + "]"; }

std::string det_path(std::size_t i, std::size_t j) {
  return track_path(i) + ".detections[" + std::to_string(j) + "]";
}

std::optional<Violation> check_box(const Box& b, const std::string& path) {
  const double v[] = {b.top, b.bottom, b.left, b.right};
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0 || x > 1.0) return Violation{"box out of range", path};
  }
  if (!(b.top < b.bottom) || !(b.left < b.right)) return Violation{"degenerate box", path};
  return std::nullopt;
}

std::optional<Violation> check_distribution(const std::vector<double>& p, const std::string& path) {
  double total = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0) return Violation{"invalid pseudo-label", path};
    total += x;
  }
  if (p.empty() || std::abs(total - 1.0) > 1e-6) return Violation{"invalid pseudo-label", path};
  return std::nullopt;
}

// Shared body of span and video validation: times lie in [0, length).
std::optional<Violation> validate_timeline(std::span<const Track> tracks,
                                           std::span<const ShotInterval> shots, double length) {
  if (!std::isfinite(length) || length <= 0.0) return Violation{"non-positive length", "length"};
  for (std::size_t k = 0; k < shots.size(); ++k) {
    const auto& s = shots[k];
    const std::string path = "shots[" + std::to_string(k) + "]";
    if (!(s.start < s.end)) return Violation{"empty shot interval", path};
    if (k > 0 && (s.start < shots[k - 1].end || s.shot_id <= shots[k - 1].shot_id)) {
      return Violation{"shots overlap or are out of order", path};
    }
  }

  std::size_t feature_dim = 0;
  bool have_dim = false;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const Track& tr = tracks[i];
    if (tr.detections.empty()) return Violation{"empty track", track_path(i)};
    if (tr.shot_id < 0) return Violation{"negative shot id", track_path(i) + ".shot_id"};

    const ShotInterval* shot = nullptr;
    for (const auto& s : shots) {
      if (s.shot_id == tr.shot_id) shot = &s;
    }
    if (shot == nullptr && !shots.empty()) {
      return Violation{"unknown shot", track_path(i) + ".shot_id"};
    }

    for (std::size_t j = 0; j < tr.detections.size(); ++j) {
      const Detection& d = tr.detections[j];
      const std::string path = det_path(i, j);
      if (auto v = check_box(d.box, path + ".box")) return v;
      if (!std::isfinite(d.t) || d.t < 0.0 || d.t >= length) {
        return Violation{"detection outside span", path + ".t"};
      }
      if (j > 0 && !(d.t > tr.detections[j - 1].t)) {
        return Violation{"timestamps not increasing", path + ".t"};
      }
      if (d.source_class != tr.detections.front().source_class) {
        return Violation{"mixed source classes", path + ".source_class"};
      }
      if (d.pseudo_label) {
        if (auto v = check_distribution(*d.pseudo_label, path + ".pseudo_label")) return v;
      }
      for (double x : d.z) {
        if (!std::isfinite(x)) return Violation{"non-finite feature", path + ".z"};
      }
      if (!have_dim) {
        feature_dim = d.z.size();
        have_dim = true;
      } else if (d.z.size() != feature_dim) {
        return Violation{"feature dimension mismatch", path + ".z"};
      }
      if (shot != nullptr && !shot->contains(d.t)) {
        return Violation{"track spans shots", path + ".t"};
      }
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<Violation> validate_span(const Span& span) {
  return validate_timeline(span.tracks, span.shots, span.length);
}

std::optional<Violation> validate_video(const Video& video) {
  return validate_timeline(video.tracks, video.shots, video.duration);
}

const Video& Corpus::video(std::int64_t video_id) const {
  for (const auto& v : videos) {
    if (v.video_id == video_id) return v;
  }
  throw UsageError("unknown video " + std::to_string(video_id));
}

const Label& Corpus::label(std::int64_t video_id, std::string_view task) const {
  for (const auto& l : labels) {
    if (l.video_id == video_id && !l.track_id && l.task == task) return l;
  }
  throw UsageError("no '" + std::string(task) + "' label for video " + std::to_string(video_id));
}

std::size_t count_tokens(const Span& span, bool include_objects) {
  std::size_t n = 1;
  for (const auto& tr : span.tracks) {
    if (is_tokenized(tr, include_objects)) n += tr.detections.size();
  }
  return n;
}

}  // namespace objtx::track
