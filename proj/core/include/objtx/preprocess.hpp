#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "objtx/track_model.hpp"

namespace objtx::prep {

/// Content summary of one frame; `hist` is L1-normalized.
struct FrameSignature {
  double t = 0.0;
  std::vector<double> hist;
};

/// Unlinked detections of one frame. Every detection's `t` equals the frame time.
struct RawFrame {
  double t = 0.0;
  std::vector<track::Detection> detections;
};

using RawDetectionStream = std::vector<RawFrame>;

/// Intersection over union of two valid boxes.
double iou(const track::Box& a, const track::Box& b);

/// Links detections of consecutive frames into tracks.
///
/// For each pair of adjacent frames, candidate links between same-class
/// detections with IoU >= iou_threshold are accepted greedily in descending
/// IoU order (ties: smaller previous-frame index, then smaller current-frame
/// index). Unmatched detections start new tracks. Track ids follow creation
/// order; shot ids are left at 0 for assign_shots.
std::vector<track::Track> link_tracks(const RawDetectionStream& stream, double iou_threshold = 0.5);

/// Rule-based cut detection: a cut precedes frame i+1 when half the L1
/// distance between consecutive histograms exceeds `threshold`. Returns
/// half-open shot intervals from the first frame time to `timeline_end`
/// (default: last frame time plus the last frame spacing).
std::vector<track::ShotInterval> detect_shots(std::span<const FrameSignature> signatures,
                                              double threshold = 0.3,
                                              std::optional<double> timeline_end = std::nullopt);

/// Sets each track's shot id, splitting tracks that cross a cut into
/// per-shot pieces. The first piece keeps the original id; later pieces get
/// fresh ids above every existing id. Throws DataError for detections outside
/// every shot.
std::vector<track::Track> assign_shots(std::vector<track::Track> tracks,
                                       std::span<const track::ShotInterval> shots);

/// Window start times 0, stride, 2*stride, ... while a full window fits.
std::vector<double> span_starts(double duration, double length = 60.0, double stride = 1.0);

/// Cuts [start, start + length) out of a video. Detections and shots are
/// clipped to the window and re-based to the window start; tracks left
/// without detections are dropped.
track::Span cut_span(const track::Video& video, double start, double length = 60.0);

/// Every overlapping window of the video. A video shorter than `length`
/// yields a single span covering it, flagged `truncated`.
std::vector<track::Span> enumerate_spans(const track::Video& video, double length = 60.0,
                                         double stride = 1.0);

/// Caps the tokenized detections at cap - 1 (one slot is [CLS]).
///
/// Each track gives up detections in proportion to its share of the
/// overage, by uniform temporal subsampling that keeps its first and last
/// detections. If endpoints alone overflow the cap, the shortest tracks are
/// dropped first. Tracks that are not tokenized are left untouched.
track::Span truncate_tokens(const track::Span& span, std::size_t cap, bool include_objects = false);

}  // namespace objtx::prep
