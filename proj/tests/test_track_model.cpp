#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "objtx/errors.hpp"
#include "objtx/preprocess.hpp"
#include "objtx/synthetic.hpp"
#include "objtx/track_model.hpp"

using namespace objtx;
using namespace objtx::track;

TEST(ValidateSpan, AcceptsWellFormedSpan) {
  auto s = fixtures::span({fixtures::track(1, 0, 5), fixtures::track(2, 3, 4)});
  EXPECT_FALSE(validate_span(s).has_value());
}

TEST(ValidateSpan, DegenerateBox) {
  auto s = fixtures::span({fixtures::track(1, 0, 3)});
  s.tracks[0].detections[1].box.bottom = s.tracks[0].detections[1].box.top;
  auto v = validate_span(s);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->message, "degenerate box");
  EXPECT_EQ(v->path, "tracks[0].detections[1].box");
}

TEST(ValidateSpan, OtherViolations) {
  auto base = fixtures::span({fixtures::track(1, 0, 3)});
  {
    auto s = base;
    s.tracks[0].detections[2].t = 1.0;
    EXPECT_EQ(validate_span(s)->message, "timestamps not increasing");
  }
  {
    auto s = base;
    s.tracks[0].detections[0].box.left = -0.1;
    EXPECT_EQ(validate_span(s)->message, "box out of range");
  }
  {
    auto s = base;
    s.tracks[0].detections[0].pseudo_label = std::vector<double>{0.5, 0.4};
    EXPECT_EQ(validate_span(s)->message, "invalid pseudo-label");
  }
  {
    auto s = base;
    s.tracks[0].detections[1].source_class = SourceClass::kObject;
    EXPECT_EQ(validate_span(s)->message, "mixed source classes");
  }
  {
    auto s = base;
    s.tracks[0].detections.clear();
    EXPECT_EQ(validate_span(s)->message, "empty track");
  }
  {
    auto s = base;
    s.tracks[0].detections[2].t = 60.0;
    EXPECT_EQ(validate_span(s)->message, "detection outside span");
  }
  {
    auto s = base;
    s.tracks[0].shot_id = 4;
    EXPECT_EQ(validate_span(s)->message, "unknown shot");
  }
  {
    auto s = base;
    s.tracks[0].detections[1].z.pop_back();
    EXPECT_EQ(validate_span(s)->message, "feature dimension mismatch");
  }
}

TEST(ValidateSpan, TrackCrossingACutFromTheGenerator) {
  synth::GenConfig gc;
  gc.n_movies = 3;
  gc.segments_per_movie = 1;
  gc.split_tracks_at_shots = false;
  auto gen = synth::generate_corpus(gc);
  bool found = false;
  for (const auto& v : gen.corpus.videos) {
    auto bad = validate_video(v);
    if (bad) {
      EXPECT_EQ(bad->message, "track spans shots");
      found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST(ValidateSpan, AcceptsEveryGeneratorAndPreprocessOutput) {
  synth::GenConfig gc;
  gc.n_movies = 4;
  gc.segments_per_movie = 2;
  auto gen = synth::generate_corpus(gc);
  for (const auto& v : gen.corpus.videos) {
    EXPECT_FALSE(validate_video(v).has_value());
    for (const auto& s : prep::enumerate_spans(v, 60.0, 7.0)) {
      EXPECT_FALSE(validate_span(s).has_value());
      EXPECT_FALSE(validate_span(prep::truncate_tokens(s, 20)).has_value());
    }
  }
}

TEST(CountTokens, Arithmetic) {
  EXPECT_EQ(count_tokens(fixtures::span({}), false), 1u);
  auto s = fixtures::span({fixtures::track(1, 0, 5), fixtures::track(2, 0, 5), fixtures::track(3, 0, 5)});
  EXPECT_EQ(count_tokens(s, false), 16u);
}

TEST(CountTokens, ObjectsExcludedUnlessRequested) {
  synth::GenConfig gc;
  gc.n_movies = 3;
  gc.segments_per_movie = 1;
  auto gen = synth::generate_corpus(gc);
  for (const auto& v : gen.corpus.videos) {
    Span s;
    s.length = v.duration;
    s.shots = v.shots;
    s.tracks = v.tracks;
    std::size_t persons = 0, objects = 0;
    for (std::size_t i = 0; i < v.tracks.size(); ++i) {
      const auto& truth = gen.scripts[&v - gen.corpus.videos.data()].tracks[i];
      ASSERT_EQ(truth.track_id, v.tracks[i].track_id);
      (truth.is_object ? objects : persons) += v.tracks[i].detections.size();
    }
    EXPECT_GT(objects, 0u);
    EXPECT_EQ(count_tokens(s, false), persons + 1);
    EXPECT_EQ(count_tokens(s, true), persons + objects + 1);
  }
}

TEST(Corpus, LookupAndMissingLabels) {
  Corpus c;
  c.videos.push_back(Video{7, 1, 7, 60.0, {}, {}});
  c.labels.push_back(Label{7, std::nullopt, "harmony", 1.0, {}});
  c.labels.push_back(Label{7, 3, "role", 2.0, {0.1, 0.9}});
  EXPECT_EQ(c.video(7).movie_id, 1);
  EXPECT_EQ(c.label(7, "harmony").value, 1.0);
  EXPECT_THROW(c.label(7, "role"), UsageError);  // per-track labels are not video labels
  EXPECT_THROW(c.video(8), UsageError);
}
