#pragma once

// Small hand-built records shared by the unit tests.

#include <cstdint>
#include <vector>

#include "objtx/track_model.hpp"

namespace fixtures {

using objtx::track::Box;
using objtx::track::Detection;
using objtx::track::ShotInterval;
using objtx::track::SourceClass;
using objtx::track::Span;
using objtx::track::Track;
using objtx::track::Video;

inline Detection det(double t, Box box = {0.1, 0.5, 0.1, 0.4}, std::size_t d_z = 4,
                     SourceClass cls = SourceClass::kPerson, std::size_t d_label = 0) {
  Detection d;
  d.t = t;
  d.box = box;
  d.z.assign(d_z, 0.0);
  for (std::size_t k = 0; k < d_z; ++k) d.z[k] = 0.1 * static_cast<double>(k + 1) + t;
  d.source_class = cls;
  if (d_label) {
    std::vector<double> p(d_label, 0.0);
    p[static_cast<std::size_t>(t) % d_label] = 1.0;
    d.pseudo_label = p;
  }
  return d;
}

/// `n` detections at t0, t0 + step, ...
inline Track track(std::int64_t id, double t0, std::size_t n, double step = 1.0, std::int64_t shot = 0,
                   SourceClass cls = SourceClass::kPerson, std::size_t d_label = 0) {
  Track tr;
  tr.track_id = id;
  tr.shot_id = shot;
  for (std::size_t i = 0; i < n; ++i)
    tr.detections.push_back(det(t0 + step * static_cast<double>(i), {0.1, 0.5, 0.1, 0.4}, 4, cls, d_label));
  return tr;
}

inline Span span(std::vector<Track> tracks, double length = 60.0) {
  Span s;
  s.length = length;
  s.shots = {ShotInterval{0, 0.0, length}};
  s.tracks = std::move(tracks);
  return s;
}

}  // namespace fixtures
