#include "objtx/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "objtx/errors.hpp"

namespace objtx::prep {

using track::Box;
using track::Detection;
using track::ShotInterval;
using track::Span;
using track::Track;
using track::Video;

double iou(const Box& a, const Box& b) {
  const double ih = std::min(a.bottom, b.bottom) - std::max(a.top, b.top);
  const double iw = std::min(a.right, b.right) - std::max(a.left, b.left);
  if (ih <= 0.0 || iw <= 0.0) return 0.0;
  const double inter = ih * iw;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

std::vector<Track> link_tracks(const RawDetectionStream& stream, double iou_threshold) {
  std::vector<Track> tracks;
  // Track index owning each detection of the previous frame.
  std::vector<std::size_t> prev_owner;
  const RawFrame* prev = nullptr;

  for (const RawFrame& frame : stream) {
    if (prev != nullptr && !(frame.t > prev->t)) {
      throw UsageError("link_tracks: frames must be strictly time-ordered");
    }
    std::vector<std::size_t> owner(frame.detections.size(), SIZE_MAX);

    if (prev != nullptr) {
      struct Candidate {
        double score;
        std::size_t prev_idx;
        std::size_t cur_idx;
      };
      std::vector<Candidate> cands;
      for (std::size_t i = 0; i < prev->detections.size(); ++i) {
        for (std::size_t j = 0; j < frame.detections.size(); ++j) {
          const Detection& a = prev->detections[i];
          const Detection& b = frame.detections[j];
          if (a.source_class != b.source_class) continue;
          const double s = iou(a.box, b.box);
          if (s >= iou_threshold) cands.push_back({s, i, j});
        }
      }
      std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
        return std::tie(y.score, x.prev_idx, x.cur_idx) < std::tie(x.score, y.prev_idx, y.cur_idx);
      });
      std::vector<bool> prev_used(prev->detections.size(), false);
      for (const Candidate& c : cands) {
        if (prev_used[c.prev_idx] || owner[c.cur_idx] != SIZE_MAX) continue;
        prev_used[c.prev_idx] = true;
        owner[c.cur_idx] = prev_owner[c.prev_idx];
      }
    }

    for (std::size_t j = 0; j < frame.detections.size(); ++j) {
      if (owner[j] == SIZE_MAX) {
        Track t;
        t.track_id = static_cast<std::int64_t>(tracks.size());
        tracks.push_back(std::move(t));
        owner[j] = tracks.size() - 1;
      }
      Detection d = frame.detections[j];
      d.t = frame.t;
      tracks[owner[j]].detections.push_back(std::move(d));
    }
    prev_owner = std::move(owner);
    prev = &frame;
  }
  return tracks;
}

std::vector<ShotInterval> detect_shots(std::span<const FrameSignature> signatures, double threshold,
                                       std::optional<double> timeline_end) {
  if (signatures.empty()) throw UsageError("detect_shots: need at least one signature");
  double end = 0.0;
  if (timeline_end) {
    end = *timeline_end;
  } else if (signatures.size() >= 2) {
    const auto n = signatures.size();
    end = signatures[n - 1].t + (signatures[n - 1].t - signatures[n - 2].t);
  } else {
    end = signatures[0].t + 1.0;
  }
  if (!(end > signatures.back().t)) throw UsageError("detect_shots: timeline end precedes last frame");

  std::vector<double> starts{signatures[0].t};
  for (std::size_t i = 0; i + 1 < signatures.size(); ++i) {
    const auto& a = signatures[i].hist;
    const auto& b = signatures[i + 1].hist;
    if (a.size() != b.size()) throw DimensionError("detect_shots: histogram sizes differ");
    if (!(signatures[i + 1].t > signatures[i].t)) {
      throw UsageError("detect_shots: signatures must be strictly time-ordered");
    }
    double l1 = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) l1 += std::abs(a[k] - b[k]);
    if (0.5 * l1 > threshold) starts.push_back(signatures[i + 1].t);
  }

  std::vector<ShotInterval> shots;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const double stop = k + 1 < starts.size() ? starts[k + 1] : end;
    shots.push_back({static_cast<std::int64_t>(k), starts[k], stop});
  }
  return shots;
}

std::vector<Track> assign_shots(std::vector<Track> tracks, std::span<const ShotInterval> shots) {
  std::int64_t next_id = 0;
  for (const auto& t : tracks) next_id = std::max(next_id, t.track_id + 1);

  auto shot_of = [&](double t) -> const ShotInterval& {
    auto it = std::upper_bound(shots.begin(), shots.end(), t,
                               [](double v, const ShotInterval& s) { return v < s.start; });
    if (it == shots.begin() || !std::prev(it)->contains(t)) {
      throw DataError("assign_shots: detection at t=" + std::to_string(t) + " lies outside every shot");
    }
    return *std::prev(it);
  };

  std::vector<Track> out;
  out.reserve(tracks.size());
  for (Track& tr : tracks) {
    bool first_piece = true;
    Track piece;
    for (Detection& d : tr.detections) {
      const ShotInterval& s = shot_of(d.t);
      if (!piece.detections.empty() && piece.shot_id != s.shot_id) {
        out.push_back(std::move(piece));
        piece = Track{};
      }
      if (piece.detections.empty()) {
        piece.track_id = first_piece ? tr.track_id : next_id++;
        piece.shot_id = s.shot_id;
        first_piece = false;
      }
      piece.detections.push_back(std::move(d));
    }
    if (!piece.detections.empty()) out.push_back(std::move(piece));
  }
  return out;
}

std::vector<double> span_starts(double duration, double length, double stride) {
  if (!(stride > 0.0)) throw UsageError("span stride must be positive");
  if (!(length > 0.0)) throw UsageError("span length must be positive");
  std::vector<double> starts;
  if (duration < length) {
    starts.push_back(0.0);
    return starts;
  }
  const auto count = static_cast<std::size_t>(std::floor((duration - length) / stride + 1e-9)) + 1;
  for (std::size_t k = 0; k < count; ++k) starts.push_back(static_cast<double>(k) * stride);
  return starts;
}

Span cut_span(const Video& video, double start, double length) {
  Span span;
  span.video_id = video.video_id;
  span.segment_id = video.segment_id;
  span.start_time = start;
  span.length = length;
  if (video.duration < length) {
    span.length = video.duration;
    span.truncated = true;
  }
  const double stop = start + span.length;
  for (const ShotInterval& s : video.shots) {
    const double a = std::max(s.start, start);
    const double b = std::min(s.end, stop);
    if (a < b) span.shots.push_back({s.shot_id, a - start, b - start});
  }
  for (const Track& tr : video.tracks) {
    Track clipped;
    clipped.track_id = tr.track_id;
    clipped.shot_id = tr.shot_id;
    for (const Detection& d : tr.detections) {
      if (d.t >= start && d.t < stop) {
        Detection r = d;
        r.t = d.t - start;
        clipped.detections.push_back(std::move(r));
      }
    }
    if (!clipped.detections.empty()) span.tracks.push_back(std::move(clipped));
  }
  return span;
}

std::vector<Span> enumerate_spans(const Video& video, double length, double stride) {
  std::vector<Span> spans;
  for (double s : span_starts(video.duration, length, stride)) spans.push_back(cut_span(video, s, length));
  return spans;
}

Span truncate_tokens(const Span& span, std::size_t cap, bool include_objects) {
  if (cap < 2) throw UsageError("truncate_tokens: cap must be at least 2");
  const std::size_t budget = cap - 1;
  if (track::count_tokens(span, include_objects) - 1 <= budget) return span;

  Span out = span;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < out.tracks.size(); ++i) {
    if (track::is_tokenized(out.tracks[i], include_objects)) eligible.push_back(i);
  }

  // Endpoints alone overflow: drop the shortest tracks (latest start first
  // among equals) until the endpoints fit.
  auto floor_of = [&](std::size_t i) { return std::min<std::size_t>(out.tracks[i].detections.size(), 2); };
  std::size_t endpoint_total = 0;
  for (std::size_t i : eligible) endpoint_total += floor_of(i);
  if (endpoint_total > budget) {
    std::vector<std::size_t> order = eligible;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& ta = out.tracks[a];
      const auto& tb = out.tracks[b];
      return std::make_tuple(ta.detections.size(), -ta.detections.front().t, -ta.track_id) <
             std::make_tuple(tb.detections.size(), -tb.detections.front().t, -tb.track_id);
    });
    std::vector<bool> dropped(out.tracks.size(), false);
    for (std::size_t i : order) {
      if (endpoint_total <= budget) break;
      endpoint_total -= floor_of(i);
      dropped[i] = true;
    }
    std::vector<Track> kept;
    for (std::size_t i = 0; i < out.tracks.size(); ++i) {
      if (!dropped[i]) kept.push_back(std::move(out.tracks[i]));
    }
    out.tracks = std::move(kept);
    eligible.clear();
    for (std::size_t i = 0; i < out.tracks.size(); ++i) {
      if (track::is_tokenized(out.tracks[i], include_objects)) eligible.push_back(i);
    }
  }

  std::size_t total = 0;
  for (std::size_t i : eligible) total += out.tracks[i].detections.size();
  if (total <= budget) return out;

  // Proportional removal with per-track capacity n - min(n, 2): floor the
  // ideal shares, then hand out the remainder by largest unmet share.
  const std::size_t overage = total - budget;
  std::vector<double> share(eligible.size());
  std::vector<std::size_t> removal(eligible.size()), capacity(eligible.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < eligible.size(); ++k) {
    const std::size_t n = out.tracks[eligible[k]].detections.size();
    share[k] = static_cast<double>(overage) * static_cast<double>(n) / static_cast<double>(total);
    capacity[k] = n - std::min<std::size_t>(n, 2);
    removal[k] = std::min(capacity[k], static_cast<std::size_t>(std::floor(share[k])));
    assigned += removal[k];
  }
  while (assigned < overage) {
    std::size_t best = SIZE_MAX;
    for (std::size_t k = 0; k < eligible.size(); ++k) {
      if (removal[k] >= capacity[k]) continue;
      if (best == SIZE_MAX || share[k] - removal[k] > share[best] - removal[best]) best = k;
    }
    ++removal[best];
    ++assigned;
  }

  for (std::size_t k = 0; k < eligible.size(); ++k) {
    if (removal[k] == 0) continue;
    auto& dets = out.tracks[eligible[k]].detections;
    const std::size_t n = dets.size();
    const std::size_t keep = n - removal[k];
    std::vector<Detection> sampled;
    sampled.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      const double pos = keep == 1 ? 0.0
                                   : static_cast<double>(i) * static_cast<double>(n - 1) /
                                         static_cast<double>(keep - 1);
      sampled.push_back(std::move(dets[static_cast<std::size_t>(std::llround(pos))]));
    }
    dets = std::move(sampled);
  }
  return out;
}

}  // namespace objtx::prep
