#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "objtx/errors.hpp"
#include "objtx/finetune.hpp"
#include "objtx/io.hpp"
#include "objtx/synthetic.hpp"
#include "objtx/verify.hpp"

using namespace objtx;
using namespace objtx::synth;

namespace {

std::string corpus_bytes(const GenConfig& c) {
  std::ostringstream out;
  io::write_corpus(out, generate_corpus(c).corpus);
  return out.str();
}

GenConfig mid_config(std::uint64_t seed) {
  GenConfig c;
  c.n_movies = 12;
  c.segments_per_movie = 2;
  c.seed = seed;
  return c;
}

std::size_t argmax(const std::vector<double>& v) { return finetune::argmax(v); }

// Role sequences per character rebuilt from the written corpus: pseudo-label
// argmax of each person track, in shot order.
std::map<std::size_t, std::vector<std::size_t>> role_sequences(const GeneratedCorpus& gen, std::size_t v) {
  std::map<std::size_t, std::vector<std::size_t>> seq;
  const auto& video = gen.corpus.videos[v];
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < video.tracks.size(); ++i) order.push_back({video.tracks[i].detections[0].t, i});
  std::sort(order.begin(), order.end());
  for (auto [t, i] : order) {
    const auto& truth = gen.scripts[v].tracks[i];
    if (truth.is_object) continue;
    seq[truth.instance].push_back(argmax(*video.tracks[i].detections[0].pseudo_label));
  }
  return seq;
}

}  // namespace

TEST(Generator, SameSeedSameBytes) {
  auto c = mid_config(4);
  EXPECT_EQ(corpus_bytes(c), corpus_bytes(c));
  auto d = c;
  d.seed = 5;
  EXPECT_NE(corpus_bytes(c), corpus_bytes(d));
}

TEST(Generator, NoiselessFeaturesArePrototypeSums) {
  auto c = mid_config(1);
  c.noise_scale = 0.0;
  auto gen = generate_corpus(c);
  for (std::size_t v = 0; v < gen.corpus.videos.size(); ++v) {
    const auto& video = gen.corpus.videos[v];
    // feature minus its own prototype is the same theme term for every detection
    std::vector<double> theme_term;
    for (std::size_t i = 0; i < video.tracks.size(); ++i) {
      const auto& truth = gen.scripts[v].tracks[i];
      const auto& proto = truth.is_object ? gen.object_prototypes[truth.instance - kCharacters]
                                          : gen.role_prototypes[truth.role];
      for (const auto& d : video.tracks[i].detections) {
        std::vector<double> rest(c.d_z);
        for (std::size_t k = 0; k < c.d_z; ++k) rest[k] = d.z[k] - proto[k];
        if (theme_term.empty()) theme_term = rest;
        for (std::size_t k = 0; k < c.d_z; ++k) ASSERT_NEAR(rest[k], theme_term[k], 1e-12);
      }
    }
  }
}

TEST(Generator, PseudoLabelsAreSmoothedRoles) {
  auto gen = generate_corpus(mid_config(2));
  const double hi = 1.0 - 0.05 + 0.05 / 12.0, lo = 0.05 / 12.0;
  for (std::size_t v = 0; v < gen.corpus.videos.size(); ++v)
    for (std::size_t i = 0; i < gen.corpus.videos[v].tracks.size(); ++i) {
      const auto& truth = gen.scripts[v].tracks[i];
      for (const auto& d : gen.corpus.videos[v].tracks[i].detections) {
        ASSERT_EQ(d.pseudo_label.has_value(), !truth.is_object);
        if (!d.pseudo_label) continue;
        for (std::size_t k = 0; k < 12; ++k) ASSERT_NEAR((*d.pseudo_label)[k], k == truth.role ? hi : lo, 1e-12);
      }
    }
}

TEST(Oracle, AnswersFromTheScript) {
  auto gen = generate_corpus(mid_config(3));
  const auto& v = gen.corpus.videos[2];
  OracleQuery q;
  q.kind = OracleQuery::Kind::kRoleDistribution;
  q.video_id = v.video_id;
  for (std::size_t i = 0; i < v.tracks.size(); ++i) {
    if (!v.tracks[i].detections[0].pseudo_label) continue;
    q.track_id = v.tracks[i].track_id;
    EXPECT_EQ(oracle_predict(gen, q).distribution, *v.tracks[i].detections[0].pseudo_label);
  }
  q.kind = OracleQuery::Kind::kCompatible;
  q.other_video_id = v.video_id;
  EXPECT_TRUE(oracle_predict(gen, q).compatible);
  q.other_video_id = gen.corpus.videos[3].video_id;
  EXPECT_FALSE(oracle_predict(gen, q).compatible);
  q.kind = OracleQuery::Kind::kTaskLabel;
  q.task = "nonsense";
  EXPECT_THROW(oracle_predict(gen, q), UsageError);
  q.task = std::string(kTaskHarmony);
  q.video_id = 12345;
  EXPECT_THROW(oracle_predict(gen, q), UsageError);
}

TEST(Oracle, DirectionAndHarmonyMatchAnIndependentRule) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto gen = generate_corpus(mid_config(seed));
    for (std::size_t v = 0; v < gen.corpus.videos.size(); ++v) {
      // direction: the signed step between consecutive roles of any character
      int votes = 0;
      for (const auto& [c, roles] : role_sequences(gen, v))
        for (std::size_t a = 1; a < roles.size(); ++a) {
          const auto step = (roles[a] + 12 - roles[a - 1]) % 12;
          if (step == 2) ++votes;
          if (step == 10) --votes;
        }
      ASSERT_NE(votes, 0);
      OracleQuery q;
      q.video_id = gen.corpus.videos[v].video_id;
      q.task = std::string(kTaskDirection);
      EXPECT_EQ(oracle_predict(gen, q).value, votes > 0 ? 1.0 : 0.0);

      // harmony: every shot shows two persons of equal role parity
      const auto& video = gen.corpus.videos[v];
      std::map<std::int64_t, std::vector<std::size_t>> parity_by_shot;
      for (std::size_t i = 0; i < video.tracks.size(); ++i)
        if (video.tracks[i].detections[0].pseudo_label)
          parity_by_shot[video.tracks[i].shot_id].push_back(argmax(*video.tracks[i].detections[0].pseudo_label) % 2);
      bool same = true;
      for (const auto& [s, p] : parity_by_shot) {
        ASSERT_EQ(p.size(), 2u);
        same &= p[0] == p[1];
      }
      q.task = std::string(kTaskHarmony);
      EXPECT_EQ(oracle_predict(gen, q).value, same ? 1.0 : 0.0);
      EXPECT_EQ(gen.corpus.label(q.video_id, kTaskHarmony).value, same ? 1.0 : 0.0);
    }
  }
}

TEST(Generator, MaskedRolesArePredictableFromContext) {
  // Predict a character's role from its previous appearance and the
  // direction shown by the other characters, never from its own features.
  auto gen = generate_corpus(mid_config(7));
  std::size_t right = 0, total = 0;
  for (std::size_t v = 0; v < gen.corpus.videos.size(); ++v) {
    auto seq = role_sequences(gen, v);
    for (const auto& [c, roles] : seq)
      for (std::size_t a = 1; a < roles.size(); ++a) {
        int votes = 0;
        for (const auto& [o, other] : seq) {
          if (o == c) continue;
          for (std::size_t b = 1; b < other.size(); ++b) votes += (other[b] + 12 - other[b - 1]) % 12 == 2 ? 1 : -1;
        }
        if (votes == 0) continue;
        ++total;
        right += roles[a] == (roles[a - 1] + (votes > 0 ? 2 : 10)) % 12;
      }
  }
  ASSERT_GT(total, 100u);
  EXPECT_GT(double(right) / double(total), 1.0 / 12.0 + 0.5);
}

TEST(Generator, TiersSeparateUnderTheShortTermBaseline) {
  double theme = 0.0, harmony = 0.0, direction = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    GenConfig gc;
    gc.n_movies = 40;
    gc.seed = seed;
    auto gen = generate_corpus(gc);
    auto splits = finetune::split_dataset(gen.corpus.videos, {0.7, 0.15, 0.15}, true, seed);
    model::ModelConfig mc = verify::tiny_model_config();
    mc.d_z = gc.d_z;
    mc.d_label = gc.d_label;
    mc.hidden = 32;
    mc.heads = 4;
    mc.head_dim = 8;
    mc.ffn_dim = 64;
    mc.token_cap = 512;
    mc.n_instance_slots = 32;
    model::ObjectTransformer<double> init(mc, seed);
    finetune::FinetuneConfig fc;
    fc.base_lr = 1e-2;
    fc.backbone = finetune::Backbone::kShortTerm;
    fc.seed = seed;
    auto score = [&](std::string_view name, std::size_t classes) {
      finetune::TaskSpec task{std::string(name), finetune::TaskKind::kClassification, classes};
      auto labels = finetune::task_labels(gen.corpus, task);
      return finetune::run_finetune<double>(gen.corpus.videos, labels, splits, init, task, fc).grid.test_score / 3.0;
    };
    theme += score(kTaskTheme, gc.n_themes);
    harmony += score(kTaskHarmony, 2);
    direction += score(kTaskDirection, 2);
  }
  EXPECT_EQ(theme, 1.0);
  EXPECT_LE(harmony, 0.6);
  EXPECT_LE(direction, 0.6);
}
