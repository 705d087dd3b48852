#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "objtx/errors.hpp"
#include "objtx/model.hpp"
#include "objtx/numerics/ops.hpp"
#include "objtx/numerics/rng.hpp"
#include "objtx/preprocess.hpp"
#include "objtx/pretrain.hpp"
#include "objtx/synthetic.hpp"
#include "objtx/verify.hpp"

using namespace objtx;
using namespace objtx::pretrain;
using model::CorruptionMode;
using num::Graph;
using num::Mode;
using num::Rng;
using num::Tensor;

namespace {

Tensor<double> rows_of(std::initializer_list<std::vector<double>> rows) {
  const std::size_t c = rows.begin()->size();
  Tensor<double> t(num::Shape{rows.size(), c});
  std::size_t r = 0;
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < c; ++k) t(r, k) = row[k];
    ++r;
  }
  return t;
}

synth::GenConfig pretrain_gen(std::uint64_t seed) {
  synth::GenConfig gc = verify::tiny_gen_config(seed);
  gc.n_movies = 6;
  gc.segments_per_movie = 2;
  gc.segment_length_s = 70.0;
  return gc;
}

model::ModelConfig pretrain_model(const synth::GenConfig& gc) {
  model::ModelConfig c = verify::tiny_model_config();
  c.hidden = 16;
  c.heads = 2;
  c.head_dim = 8;
  c.ffn_dim = 32;
  c.d_z = gc.d_z;
  c.d_label = gc.d_label;
  c.n_instance_slots = 16;
  c.token_cap = 256;
  return c;
}

double window_mean(const std::vector<TraceRecord>& trace, std::size_t from, double TraceRecord::*field) {
  double s = 0.0;
  for (std::size_t i = from; i < from + 100; ++i) s += trace[i].*field;
  return s / 100.0;
}

}  // namespace

TEST(MaskedLoss, ClosedForms) {
  const std::vector<double> onehot{0, 1, 0};
  EXPECT_NEAR(masked_loss_value(onehot, onehot), 0.0, 1e-12);
  const std::vector<double> u4{0.25, 0.25, 0.25, 0.25};
  const std::vector<double> p4{0.7, 0.1, 0.1, 0.1};
  EXPECT_NEAR(masked_loss_value(p4, u4), std::log(4.0), 1e-6);
  const std::vector<double> half{0.5, 0.5};
  const std::vector<double> skew{1.0, 0.0};
  EXPECT_NEAR(masked_loss_value(skew, half), 0.6931, 1e-4);

  Graph<double> g;
  auto p = rows_of({{0.5, 0.5}, {0.2, 0.8}});
  auto q = rows_of({{0.5, 0.5}, {0.6, 0.4}});
  const double want = 0.5 * (std::log(2.0) - 0.2 * std::log(0.6) - 0.8 * std::log(0.4));
  EXPECT_NEAR(masked_loss(g.constant(q), p).value()[0], want, 1e-6);
}

TEST(MaskedLoss, NonNegativeWithEntropyAtEquality) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(5), q(5);
    double sp = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      p[k] = num::uniform01(rng);
      q[k] = num::uniform01(rng) + 1e-3;
      sp += p[k];
      sq += q[k];
    }
    double entropy = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      p[k] /= sp;
      q[k] /= sq;
      entropy -= p[k] * std::log(p[k]);
    }
    EXPECT_GE(masked_loss_value(p, q), 0.0);
    EXPECT_GE(masked_loss_value(p, q), entropy - 1e-12);  // Gibbs
    EXPECT_NEAR(masked_loss_value(p, p), entropy, 1e-12);
  }
}

TEST(InfoNce, ClosedForms) {
  const std::vector<double> v{1.0, 0.0};
  std::vector<std::vector<double>> negs(5, std::vector<double>{0.0, 1.0});
  EXPECT_NEAR(infonce_value(v, std::vector<double>{0.0, 1.0}, negs), std::log(6.0), 1e-6);

  std::vector<std::vector<double>> one{{0.0, 0.0}};
  EXPECT_NEAR(infonce_value(v, std::vector<double>{20.0, 0.0}, one), 2.061e-9, 1e-11);
  EXPECT_NEAR(infonce_value(v, std::vector<double>{1.0, 0.0}, one), std::log1p(std::exp(-1.0)), 1e-6);
  const std::vector<std::vector<double>> two{{0.0, 1.0}, {0.0, -2.0}};
  const double e = std::exp(1.0);
  EXPECT_NEAR(infonce_value(v, std::vector<double>{1.0, 0.0}, two), -std::log(e / (e + 2.0)), 1e-6);
  EXPECT_NEAR(infonce_value(v, std::vector<double>{1.0, 0.0}, two), 0.5514, 1e-4);

  Graph<double> g;
  auto l = infonce_loss(g.constant(rows_of({{1.0, 0.0}})), g.constant(rows_of({{0.5, 0.0}})),
                        g.constant(rows_of({{0.0, 1.0}, {-0.5, 3.0}})));
  EXPECT_NEAR(l.value()[0], -std::log(std::exp(0.5) / (std::exp(0.5) + 1.0 + std::exp(-0.5))), 1e-6);
}

TEST(InfoNce, MonotoneInPositiveSimilarity) {
  const std::vector<double> v{1.0, 0.5, -0.25};
  const std::vector<std::vector<double>> negs{{0.3, 0.1, 0.2}, {-1.0, 0.4, 0.0}, {0.0, 0.0, 2.0}};
  double prev = std::numeric_limits<double>::infinity();
  for (double a = -4.0; a <= 4.0; a += 0.25) {
    const double l = infonce_value(v, std::vector<double>{a, 0.0, 0.0}, negs);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(InfoNce, BatchAndPerAnchorAgree) {
  Rng rng(7);
  Tensor<double> t(num::Shape{6, 4});
  for (auto& x : t.data()) x = num::normal(rng);
  const std::vector<std::size_t> partner{1, 0, 3, 2, 5, 4};
  Graph<double> g;
  auto a = infonce_batch(g.constant(t), std::span<const std::size_t>(partner)).value()[0];
  auto b = infonce_per_anchor(g.constant(t), std::span<const std::size_t>(partner)).value()[0];
  EXPECT_NEAR(a, b, 1e-12);

  // independent scalar oracle
  double want = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<double> vi(t.data().begin() + 4 * i, t.data().begin() + 4 * i + 4);
    std::vector<double> pos(t.data().begin() + 4 * partner[i], t.data().begin() + 4 * partner[i] + 4);
    std::vector<std::vector<double>> negs;
    for (std::size_t j = 0; j < 6; ++j)
      if (j != i && j != partner[i]) negs.emplace_back(t.data().begin() + 4 * j, t.data().begin() + 4 * j + 4);
    want += infonce_value(vi, pos, negs) / 6.0;
  }
  EXPECT_NEAR(a, want, 1e-6);
}

TEST(PlanMask, FullFractionWithOneInstance) {
  auto s = fixtures::span({fixtures::track(4, 0, 3, 1.0, 0, fixtures::SourceClass::kPerson, 3)});
  Rng rng(1);
  auto plan = plan_mask(s, false, rng, 1.0);
  ASSERT_EQ(plan.corruptions.size(), 1u);
  EXPECT_EQ(plan.corruptions[0].track_id, 4);
  auto unlabeled = fixtures::span({fixtures::track(4, 0, 3)});
  EXPECT_THROW(plan_mask(unlabeled, false, rng, 1.0), DataError);
  EXPECT_THROW(plan_mask(s, false, rng, 0.0), ConfigError);
}

TEST(PlanMask, ModeFrequenciesOverManyPlans) {
  auto s = fixtures::span({fixtures::track(1, 0, 2, 1.0, 0, fixtures::SourceClass::kPerson, 3),
                           fixtures::track(2, 5, 2, 1.0, 0, fixtures::SourceClass::kPerson, 3)});
  Rng rng(2024);
  std::map<CorruptionMode, std::size_t> count;
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    auto plan = plan_mask(s, false, rng, 0.5);
    ASSERT_EQ(plan.corruptions.size(), 1u);
    const auto& c = plan.corruptions[0];
    ++count[c.mode];
    if (c.mode == CorruptionMode::kRandomFeature) {
      // replacement is a feature of the other instance
      const auto& other = s.tracks[c.track_id == 1 ? 1 : 0];
      bool from_other = false;
      for (const auto& d : other.detections) from_other |= d.z == c.replacement;
      ASSERT_TRUE(from_other);
    }
  }
  EXPECT_NEAR(double(count[CorruptionMode::kLearnedReplace]) / n, 0.8, 0.01);
  EXPECT_NEAR(double(count[CorruptionMode::kRandomFeature]) / n, 0.1, 0.01);
  EXPECT_NEAR(double(count[CorruptionMode::kKeep]) / n, 0.1, 0.01);
}

TEST(SelectAndCorrupt, OnlyTheFeatureTermChanges) {
  auto gc = verify::tiny_gen_config(3);
  auto gen = synth::generate_corpus(gc);
  const auto span = prep::cut_span(gen.corpus.videos[1], 0.0, 20.0);
  model::ObjectTransformer<double> m(verify::tiny_model_config(), 5);
  const auto& w_feat = m.registry().find("embed.w_feat")->value;
  const auto& z_mask = m.registry().find("embed.z_mask")->value;
  std::set<CorruptionMode> seen;
  Rng mask_rng(8);
  for (int trial = 0; trial < 60; ++trial) {
    Graph<double> g;
    Rng slot_a(trial), slot_b(trial);
    auto ex = select_and_corrupt(g, span, m, Mode::kTrain, mask_rng, slot_a, 0.5);
    auto clean = model::embed_tokens(g, span, m, Mode::kTrain, slot_b);
    ASSERT_EQ(ex.tokens.size(), clean.size());
    ASSERT_EQ(ex.targets.rows(), ex.masked_rows.size());
    const auto& a = ex.tokens.embeddings.value();
    const auto& b = clean.embeddings.value();
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const auto& ref = ex.tokens.provenance[r];
      const model::InstanceCorruption* corr = nullptr;
      for (const auto& c : ex.plan.corruptions)
        if (!ref.is_cls && c.track_id == ref.track_id) corr = &c;
      ASSERT_EQ(ref.masked, corr != nullptr);
      std::vector<double> dz(w_feat.rows(), 0.0);
      if (corr) {
        seen.insert(corr->mode);
        const auto& z = span.tracks[ref.track_index].detections[ref.detection_index].z;
        for (std::size_t k = 0; k < dz.size(); ++k) {
          if (corr->mode == CorruptionMode::kLearnedReplace) dz[k] = z_mask(0, k) - z[k];
          if (corr->mode == CorruptionMode::kRandomFeature) dz[k] = corr->replacement[k] - z[k];
        }
      }
      for (std::size_t c = 0; c < a.cols(); ++c) {
        double shift = 0.0;
        for (std::size_t k = 0; k < dz.size(); ++k) shift += dz[k] * w_feat(k, c);
        ASSERT_NEAR(a(r, c) - b(r, c), shift, 1e-12) << "row " << r;
      }
    }
  }
  EXPECT_EQ(seen.size(), 3u);
}

TEST(CompatBatch, PairsShareASegmentAndNothingElse) {
  auto gen = synth::generate_corpus(pretrain_gen(1));
  const auto& videos = gen.corpus.videos;
  Rng rng(3);
  auto small = build_compat_batch(videos, 4, rng, 60.0, 1.0);
  EXPECT_EQ(small.examples.size(), 4u);
  EXPECT_EQ(small.partner, (std::vector<std::size_t>{1, 0, 3, 2}));
  for (int draw = 0; draw < 1000; ++draw) {
    auto b = build_compat_batch(videos, 8, rng, 60.0, 1.0);
    ASSERT_EQ(b.examples.size(), 8u);
    std::set<std::int64_t> segments;
    for (std::size_t i = 0; i < 8; i += 2) {
      const auto& x = b.examples[i];
      const auto& y = b.examples[b.partner[i]];
      ASSERT_EQ(videos[x.video].segment_id, videos[y.video].segment_id);
      ASSERT_FALSE(x.video == y.video && x.start == y.start);
      segments.insert(videos[x.video].segment_id);
    }
    ASSERT_EQ(segments.size(), 4u);  // 6 negatives per anchor, all from other segments
  }
  EXPECT_THROW(build_compat_batch(videos, 5, rng), UsageError);
  EXPECT_THROW(build_compat_batch(videos, 64, rng), DataError);
}

TEST(CompatBatch, SixteenGivesFourteenNegatives) {
  auto gc = pretrain_gen(2);
  gc.n_movies = 8;
  auto gen = synth::generate_corpus(gc);
  Rng rng(0);
  auto b = build_compat_batch(gen.corpus.videos, 16, rng);
  for (std::size_t i = 0; i < 16; ++i) {
    std::size_t negatives = 0;
    for (std::size_t j = 0; j < 16; ++j) negatives += (j != i && j != b.partner[i]);
    EXPECT_EQ(negatives, 14u);
  }
}

TEST(Pretrain, FreshInitLosses) {
  auto gc = pretrain_gen(5);
  gc.n_movies = 8;
  auto gen = synth::generate_corpus(gc);
  model::ObjectTransformer<double> m(pretrain_model(gc), 1);
  PretrainConfig pc;
  pc.batch = 16;
  pc.objective = Objective::kMaskCompat;
  double mask = 0.0, compat = 0.0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    auto rec = evaluate_batch<double>(gen.corpus.videos, m, pc, s);
    mask += rec.mask_loss / 4.0;
    compat += rec.compat_loss / 4.0;
  }
  EXPECT_NEAR(mask, std::log(double(gc.d_label)), 0.10 * std::log(double(gc.d_label)));
  EXPECT_NEAR(compat, std::log(15.0), 0.15 * std::log(15.0));
}

TEST(Pretrain, LossFallsAndRunsRepeatExactly) {
  auto gc = pretrain_gen(6);
  auto gen = synth::generate_corpus(gc);
  PretrainConfig pc;
  pc.iterations = 2000;
  pc.batch = 4;
  pc.base_lr = 3e-3;
  pc.objective = Objective::kMaskCompat;
  pc.seed = 11;
  model::ObjectTransformer<double> m(pretrain_model(gc), 2);
  auto trace = pretrain_loop<double>(gen.corpus.videos, m, pc);
  ASSERT_EQ(trace.size(), 2000u);
  EXPECT_NEAR(trace[0].mask_loss, std::log(double(gc.d_label)), 0.1 * std::log(double(gc.d_label)));
  EXPECT_NEAR(trace[0].compat_loss, std::log(3.0), 0.15 * std::log(3.0));
  EXPECT_EQ(trace[0].lr, 0.0);
  const double first = window_mean(trace, 0, &TraceRecord::total);
  const double mid = window_mean(trace, 950, &TraceRecord::total);
  const double last = window_mean(trace, 1900, &TraceRecord::total);
  EXPECT_LT(mid, first);
  EXPECT_LT(last, mid);

  PretrainConfig short_run = pc;
  short_run.iterations = 30;
  model::ObjectTransformer<double> a(pretrain_model(gc), 2), b(pretrain_model(gc), 2);
  auto ta = pretrain_loop<double>(gen.corpus.videos, a, short_run);
  auto tb = pretrain_loop<double>(gen.corpus.videos, b, short_run);
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_EQ(ta[i].total, tb[i].total);
  for (std::size_t p = 0; p < a.registry().size(); ++p)
    EXPECT_TRUE(std::ranges::equal(a.registry()[p].value.data(), b.registry()[p].value.data()));
}
