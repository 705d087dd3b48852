#include "objtx/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "objtx/errors.hpp"
#include "objtx/numerics/rng.hpp"

namespace objtx::synth {

using num::Rng;
using num::SeedSequence;
using track::Box;
using track::Detection;
using track::Label;
using track::ShotInterval;
using track::SourceClass;
using track::Track;
using track::Video;

void GenConfig::validate() const {
  if (n_movies == 0 || segments_per_movie == 0 || detections_per_instance == 0 || d_z == 0 ||
      theme_dim == 0 || n_themes == 0) {
    throw ConfigError("generator counts must be positive");
  }
  if (instances_per_segment < kCharacters) {
    throw ConfigError("instances_per_segment must be at least " + std::to_string(kCharacters));
  }
  if (d_label < 4 || d_label % 2 != 0) throw ConfigError("d_label must be even and at least 4");
  if (!(noise_scale >= 0.0)) throw ConfigError("noise_scale must be non-negative");
  if (!(advance_prob >= 0.0 && advance_prob <= 1.0)) throw ConfigError("advance_prob must lie in [0, 1]");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (min_shot_s < 2 || max_shot_s < min_shot_s) throw ConfigError("invalid shot length range");
  if (!(segment_length_s >= static_cast<double>(min_shot_s))) {
    throw ConfigError("segment shorter than one shot");
  }
}

namespace {

std::vector<double> gaussian_vector(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * num::normal(rng);
  return v;
}

double jitter(Rng& rng, double amp) { return amp * (2.0 * num::uniform01(rng) - 1.0); }

std::vector<double> smoothed_onehot(std::size_t k, std::size_t d, double eps) {
  std::vector<double> p(d, eps / static_cast<double>(d));
  p[k] += 1.0 - eps;
  return p;
}

std::vector<ShotInterval> draw_shots(const GenConfig& c, Rng& rng) {
  std::vector<ShotInterval> shots;
  const auto total = static_cast<std::size_t>(std::floor(c.segment_length_s));
  std::size_t t = 0;
  while (t < total) {
    std::size_t len = c.min_shot_s + num::uniform_index(rng, c.max_shot_s - c.min_shot_s + 1);
    const std::size_t rest = total - t - std::min(len, total - t);
    if (rest > 0 && rest < c.min_shot_s / 2) len += rest;
    len = std::min(len, total - t);
    shots.push_back({static_cast<std::int64_t>(shots.size()), static_cast<double>(t),
                     static_cast<double>(t + len)});
    t += len;
  }
  shots.back().end = c.segment_length_s;
  return shots;
}

struct Place {
  double top, bottom, left, right;
};

Place person_place(std::size_t side, Rng& rng) {
  const double top = 0.12 + 0.06 * num::uniform01(rng);
  const double bottom = 0.80 + 0.08 * num::uniform01(rng);
  return side == 0 ? Place{top, bottom, 0.05, 0.42} : Place{top, bottom, 0.58, 0.95};
}

Place object_place(std::size_t index, std::size_t n_objects) {
  const double band = 0.9 / static_cast<double>(n_objects);
  const double top = 0.05 + band * static_cast<double>(index);
  return {top + 0.1 * band, top + 0.9 * band, 0.46, 0.54};
}

Box jittered(const Place& p, Rng& rng, double amp) {
  Box b{p.top + jitter(rng, amp), p.bottom + jitter(rng, amp), p.left + jitter(rng, amp),
        p.right + jitter(rng, amp)};
  b.top = std::clamp(b.top, 0.0, 1.0);
  b.bottom = std::clamp(b.bottom, 0.0, 1.0);
  b.left = std::clamp(b.left, 0.0, 1.0);
  b.right = std::clamp(b.right, 0.0, 1.0);
  return b;
}

}  // namespace

GeneratedCorpus generate_corpus(const GenConfig& config) {
  config.validate();
  GeneratedCorpus gen;
  gen.config = config;
  const SeedSequence seeds(config.seed);

  Rng global = seeds.stream("corpus.global");
  {
    // Two orthonormal directions spanning the role circle.
    std::vector<double> u = gaussian_vector(global, config.d_z, 1.0);
    std::vector<double> v = gaussian_vector(global, config.d_z, 1.0);
    auto normalize = [](std::vector<double>& x) {
      const double n = std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
      for (auto& e : x) e /= n;
    };
    normalize(u);
    const double uv = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= uv * u[i];
    normalize(v);
    for (std::size_t r = 0; r < config.d_label; ++r) {
      auto proto = gaussian_vector(global, config.d_z, 1.0);
      const double a = 2.0 * std::numbers::pi * static_cast<double>(r) / static_cast<double>(config.d_label);
      for (std::size_t i = 0; i < config.d_z; ++i) {
        proto[i] += config.role_circle * (std::cos(a) * u[i] + std::sin(a) * v[i]);
      }
      gen.role_prototypes.push_back(std::move(proto));
    }
  }
  const std::size_t n_objects = config.instances_per_segment - kCharacters;
  for (std::size_t o = 0; o < n_objects; ++o) gen.object_prototypes.push_back(gaussian_vector(global, config.d_z, 1.0));
  for (std::size_t k = 0; k < config.n_themes; ++k) gen.theme_prototypes.push_back(gaussian_vector(global, config.theme_dim, 1.0));
  // d_z x theme_dim projection of the theme into feature space.
  std::vector<double> proj = gaussian_vector(global, config.d_z * config.theme_dim,
                                             config.theme_scale / std::sqrt(static_cast<double>(config.theme_dim)));
  std::vector<double> score_dir = gaussian_vector(global, config.theme_dim, 1.0 / std::sqrt(static_cast<double>(config.theme_dim)));

  const std::size_t half = config.d_label / 2;
  std::int64_t video_id = 0;
  for (std::size_t m = 0; m < config.n_movies; ++m) {
    for (std::size_t s = 0; s < config.segments_per_movie; ++s, ++video_id) {
      Rng rng = seeds.stream("corpus", static_cast<std::uint64_t>(video_id));
      LatentScript sc;
      sc.video_id = video_id;
      sc.theme_class = num::uniform_index(rng, config.n_themes);
      sc.theme = gen.theme_prototypes[sc.theme_class];
      for (auto& x : sc.theme) x += 0.3 * num::normal(rng);
      sc.theme_score = std::inner_product(sc.theme.begin(), sc.theme.end(), score_dir.begin(), 0.0);
      sc.harmonious = num::uniform01(rng) < 0.5;
      sc.direction = num::uniform01(rng) < 0.5 ? 1 : -1;

      // Characters 0, 1 carry even roles, 2, 3 odd roles. Every side of the
      // frame hosts one even and one odd character in both label classes, so
      // only who shares a shot with whom separates them.
      if (sc.harmonious) {
        sc.pairs = {{{0, 1}, {2, 3}}};
        if (num::uniform01(rng) < 0.5) std::swap(sc.pairs[0][0], sc.pairs[0][1]);
        if (num::uniform01(rng) < 0.5) std::swap(sc.pairs[1][0], sc.pairs[1][1]);
      } else {
        const std::size_t odd_a = num::uniform01(rng) < 0.5 ? 2 : 3;
        const std::size_t odd_b = 5 - odd_a;
        sc.pairs = {{{0, odd_a}, {1, odd_b}}};
        // Even on the left in one pair, odd on the left in the other.
        const std::size_t flip = num::uniform01(rng) < 0.5 ? 0 : 1;
        std::swap(sc.pairs[flip][0], sc.pairs[flip][1]);
      }
      sc.first_pair = num::uniform01(rng) < 0.5 ? 0 : 1;
      sc.shots = draw_shots(config, rng);

      std::array<std::size_t, kCharacters> appearances{};
      for (std::size_t k = 0; k < sc.shots.size(); ++k) {
        for (std::size_t c : sc.pairs[(k + sc.first_pair) % 2]) ++appearances[c];
      }
      sc.roles.assign(kCharacters, {});
      bool any_advance = false;
      for (std::size_t c = 0; c < kCharacters; ++c) {
        const std::size_t parity = c < 2 ? 0 : 1;
        std::size_t role = 2 * num::uniform_index(rng, half) + parity;
        for (std::size_t a = 0; a < appearances[c]; ++a) {
          if (a > 0 && num::uniform01(rng) < config.advance_prob) {
            role = static_cast<std::size_t>((static_cast<long>(role) + 2 * sc.direction +
                                             static_cast<long>(config.d_label)) %
                                            static_cast<long>(config.d_label));
            any_advance = true;
          }
          sc.roles[c].push_back(role);
        }
      }
      if (!any_advance) {
        // Guarantee the rotation is observable somewhere in the segment.
        for (std::size_t c = 0; c < kCharacters && !any_advance; ++c) {
          auto& seq = sc.roles[c];
          if (seq.size() < 2) continue;
          const long step = 2 * sc.direction + static_cast<long>(config.d_label);
          seq.back() = static_cast<std::size_t>((static_cast<long>(seq[seq.size() - 2]) + step) %
                                                static_cast<long>(config.d_label));
          any_advance = true;
        }
      }

      std::vector<bool> object_in_shot(sc.shots.size() * n_objects);
      for (std::size_t i = 0; i < object_in_shot.size(); ++i) object_in_shot[i] = num::uniform01(rng) < 0.5;

      Video video;
      video.video_id = video_id;
      video.movie_id = static_cast<std::int64_t>(m);
      video.segment_id = video_id;
      video.duration = config.segment_length_s;
      video.shots = sc.shots;

      auto feature = [&](const std::vector<double>& proto) {
        std::vector<double> z(config.d_z);
        for (std::size_t i = 0; i < config.d_z; ++i) {
          double v = proto[i];
          for (std::size_t j = 0; j < config.theme_dim; ++j) v += proj[i * config.theme_dim + j] * sc.theme[j];
          if (config.noise_scale > 0.0) v += config.noise_scale * num::normal(rng);
          z[i] = v;
        }
        return z;
      };

      // Per-instance track when tracks are not split at cuts.
      std::vector<std::ptrdiff_t> whole(config.instances_per_segment, -1);
      std::array<std::size_t, kCharacters> seen{};
      Rng score_rng = seeds.stream("corpus.short_term", static_cast<std::uint64_t>(video_id));

      for (std::size_t k = 0; k < sc.shots.size(); ++k) {
        const ShotInterval& shot = sc.shots[k];
        const auto& pair = sc.pairs[(k + sc.first_pair) % 2];
        std::vector<double> times(config.detections_per_instance);
        for (std::size_t j = 0; j < times.size(); ++j) {
          times[j] = shot.start + (shot.end - shot.start) * (static_cast<double>(j) + 0.5) /
                                      static_cast<double>(times.size());
        }

        auto emit = [&](std::size_t instance, bool is_object, std::size_t role, const Place& place,
                        const std::vector<double>& proto) {
          Track* tr = nullptr;
          if (config.split_tracks_at_shots || whole[instance] < 0) {
            Track t;
            t.track_id = static_cast<std::int64_t>(video.tracks.size());
            t.shot_id = shot.shot_id;
            video.tracks.push_back(std::move(t));
            if (!config.split_tracks_at_shots) whole[instance] = static_cast<std::ptrdiff_t>(video.tracks.size() - 1);
            tr = &video.tracks.back();
            sc.tracks.push_back({tr->track_id, instance, role, is_object});
          } else {
            tr = &video.tracks[static_cast<std::size_t>(whole[instance])];
          }
          for (double t : times) {
            Detection d;
            d.t = t;
            d.box = jittered(place, rng, 0.01);
            d.z = feature(proto);
            d.source_class = is_object ? SourceClass::kObject : SourceClass::kPerson;
            if (!is_object) d.pseudo_label = smoothed_onehot(role, config.d_label, config.label_smoothing);
            tr->detections.push_back(std::move(d));
          }
          if (!is_object && config.split_tracks_at_shots) {
            Label l;
            l.video_id = video_id;
            l.track_id = tr->track_id;
            l.task = std::string(kTaskRole);
            l.value = static_cast<double>(role);
            l.scores.resize(config.d_label);
            for (std::size_t q = 0; q < config.d_label; ++q) {
              l.scores[q] = (q == role ? config.short_term_margin : 0.0) + num::normal(score_rng);
            }
            gen.corpus.labels.push_back(std::move(l));
          }
        };

        for (std::size_t side = 0; side < 2; ++side) {
          const std::size_t c = pair[side];
          const std::size_t role = sc.roles[c][seen[c]++];
          emit(c, false, role, person_place(side, rng), gen.role_prototypes[role]);
        }
        for (std::size_t o = 0; o < n_objects; ++o) {
          if (!object_in_shot[k * n_objects + o]) continue;
          emit(kCharacters + o, true, 0, object_place(o, n_objects), gen.object_prototypes[o]);
        }
      }

      auto add_label = [&](std::string_view task, double value) {
        Label l;
        l.video_id = video_id;
        l.task = std::string(task);
        l.value = value;
        gen.corpus.labels.push_back(std::move(l));
      };
      add_label(kTaskTheme, static_cast<double>(sc.theme_class));
      add_label(kTaskHarmony, sc.harmonious ? 1.0 : 0.0);
      add_label(kTaskDirection, sc.direction > 0 ? 1.0 : 0.0);
      add_label(kTaskThemeScore, sc.theme_score);

      gen.corpus.videos.push_back(std::move(video));
      gen.scripts.push_back(std::move(sc));
    }
  }
  return gen;
}

OracleAnswer oracle_predict(const GeneratedCorpus& gen, const OracleQuery& q) {
  auto script_of = [&](std::int64_t vid) -> const LatentScript& {
    for (const auto& s : gen.scripts) {
      if (s.video_id == vid) return s;
    }
    throw UsageError("oracle: unknown video " + std::to_string(vid));
  };
  OracleAnswer a;
  switch (q.kind) {
    case OracleQuery::Kind::kRoleDistribution: {
      const LatentScript& s = script_of(q.video_id);
      for (const auto& t : s.tracks) {
        if (t.track_id != q.track_id) continue;
        if (t.is_object) throw UsageError("oracle: track " + std::to_string(q.track_id) + " is an object");
        a.distribution = smoothed_onehot(t.role, gen.config.d_label, gen.config.label_smoothing);
        return a;
      }
      throw UsageError("oracle: unknown track " + std::to_string(q.track_id));
    }
    case OracleQuery::Kind::kCompatible: {
      script_of(q.video_id);
      script_of(q.other_video_id);
      a.compatible = gen.corpus.video(q.video_id).segment_id == gen.corpus.video(q.other_video_id).segment_id;
      return a;
    }
    case OracleQuery::Kind::kTaskLabel: {
      const LatentScript& s = script_of(q.video_id);
      if (q.task == kTaskTheme) a.value = static_cast<double>(s.theme_class);
      else if (q.task == kTaskHarmony) a.value = s.harmonious ? 1.0 : 0.0;
      else if (q.task == kTaskDirection) a.value = s.direction > 0 ? 1.0 : 0.0;
      else if (q.task == kTaskThemeScore) a.value = s.theme_score;
      else throw UsageError("oracle: unknown task '" + q.task + "'");
      return a;
    }
  }
  throw UsageError("oracle: unknown query kind");
}

prep::RawDetectionStream render_raw_stream(const Video& video, std::uint64_t seed) {
  std::vector<prep::RawFrame> frames;
  std::vector<const Detection*> all;
  for (const auto& tr : video.tracks)
    for (const auto& d : tr.detections) all.push_back(&d);
  std::stable_sort(all.begin(), all.end(), [](const Detection* a, const Detection* b) { return a->t < b->t; });
  for (const Detection* d : all) {
    if (frames.empty() || frames.back().t != d->t) frames.push_back({d->t, {}});
    frames.back().detections.push_back(*d);
  }
  Rng rng = SeedSequence(seed).stream("render.stream", static_cast<std::uint64_t>(video.video_id));
  for (auto& f : frames) std::shuffle(f.detections.begin(), f.detections.end(), rng);
  return frames;
}

std::vector<prep::FrameSignature> render_signatures(const Video& video, std::uint64_t seed, std::size_t bins) {
  if (bins < 2) throw UsageError("render_signatures: need at least two bins");
  Rng rng = SeedSequence(seed).stream("render.signature", static_cast<std::uint64_t>(video.video_id));
  auto half_l1 = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
  };
  std::vector<std::vector<double>> hist;
  for (std::size_t k = 0; k < video.shots.size(); ++k) {
    std::vector<double> h(bins);
    do {
      double total = 0.0;
      for (auto& x : h) {
        const double u = num::uniform01(rng);
        x = u * u * u;
        total += x;
      }
      for (auto& x : h) x /= total;
    } while (k > 0 && half_l1(h, hist.back()) <= 0.5);
    hist.push_back(std::move(h));
  }
  std::vector<prep::FrameSignature> out;
  for (double t = 0.0; t < video.duration; t += 1.0) {
    std::size_t k = 0;
    while (k + 1 < video.shots.size() && t >= video.shots[k + 1].start) ++k;
    out.push_back({t, hist[k]});
  }
  return out;
}

}  // namespace objtx::synth
