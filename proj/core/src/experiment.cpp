#include "objtx/experiment.hpp"

#include <chrono>
#include <cstdio>

#include "objtx/errors.hpp"

namespace objtx::experiment {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

}  // namespace

AblationConfig desk_ablation_config() {
  AblationConfig c;
  c.model.hidden = 32;
  c.model.layers = 3;
  c.model.heads = 4;
  c.model.head_dim = 8;
  c.model.ffn_dim = 64;
  c.model.dropout = 0.1;
  c.model.d_label = c.gen.d_label;
  c.model.d_z = c.gen.d_z;

  c.pretrain.iterations = 6000;
  c.pretrain.batch = 16;
  c.pretrain.objective = pretrain::Objective::kMask;
  c.pretrain.base_lr = 3e-3;

  c.finetune.base_lr = 1e-3;
  return c;
}

AblationResult run_ablation(const AblationConfig& config, std::uint64_t seed,
                            const std::function<void(const std::string&)>& log) {
  const auto start = Clock::now();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  AblationResult out;
  out.seed = seed;

  synth::GenConfig gc = config.gen;
  gc.seed = seed;
  const auto gen = synth::generate_corpus(gc);
  const auto& videos = gen.corpus.videos;
  const auto splits = finetune::split_dataset(videos, {0.7, 0.15, 0.15}, true, seed);

  // Pretraining sees only the training videos so no test segment leaks in.
  std::vector<track::Video> train;
  for (auto i : splits.train) train.push_back(videos[i]);

  const num::SeedSequence seeds(seed);
  model::ObjectTransformer<float> scratch(config.model, seeds.derive("init"));
  model::ObjectTransformer<float> pretrained = scratch;
  pretrain::PretrainConfig pc = config.pretrain;
  pc.seed = seed;
  auto t = Clock::now();
  const auto trace = pretrain::pretrain_loop<float>(train, pretrained, pc);
  say(fmt("pretrain: final mask loss %.4f (%.0fs)", trace.back().mask_loss, since(t)));

  finetune::FinetuneConfig fc = config.finetune;
  fc.seed = seed;
  auto run = [&](std::string_view task, finetune::Backbone backbone, const model::ObjectTransformer<float>& init,
                 const char* tag) {
    const finetune::TaskSpec spec{std::string(task), finetune::TaskKind::kClassification, 2};
    const auto labels = finetune::task_labels(gen.corpus, spec);
    fc.backbone = backbone;
    auto t0 = Clock::now();
    auto res = finetune::run_finetune<float>(videos, labels, splits, init, spec, fc);
    say(std::string(task) + " " + tag + fmt(": test %.3f (%.0fs)", res.grid.test_score, since(t0)));
    return res.grid.test_score;
  };
  using finetune::Backbone;
  out.harmony_pretrained = run(synth::kTaskHarmony, Backbone::kTransformer, pretrained, "pretrained");
  out.harmony_scratch = run(synth::kTaskHarmony, Backbone::kTransformer, scratch, "scratch");
  out.harmony_avg_pool = run(synth::kTaskHarmony, Backbone::kAvgPool, pretrained, "avg-pool");
  out.harmony_max_pool = run(synth::kTaskHarmony, Backbone::kMaxPool, pretrained, "max-pool");
  out.direction_pretrained = run(synth::kTaskDirection, Backbone::kTransformer, pretrained, "pretrained");
  out.direction_scratch = run(synth::kTaskDirection, Backbone::kTransformer, scratch, "scratch");

  t = Clock::now();
  const auto fusion_train = finetune::fusion_examples(gen.corpus, splits.train, synth::kTaskRole,
                                                      fc.span_length, fc.stride);
  const auto fusion_test = finetune::fusion_examples(gen.corpus, splits.test, synth::kTaskRole,
                                                     fc.span_length, fc.stride);
  if (fusion_train.empty() || fusion_test.empty()) throw DataError("no role-labeled tracks for late fusion");
  auto fused = pretrained;
  finetune::FusionConfig fu = config.fusion;
  fu.seed = seed;
  finetune::train_fusion<float>(fusion_train, fused, fu);
  out.fusion = finetune::evaluate_fusion<float>(fusion_test, fused);
  say(fmt("role: fused %.3f vs short-term %.3f", out.fusion.fused_accuracy, out.fusion.short_term_accuracy) +
      fmt(" (%.0f test tracks, %.0fs)", static_cast<double>(fusion_test.size()), since(t)));

  out.seconds = since(start);
  return out;
}

AblationResult mean_result(std::span<const AblationResult> results) {
  if (results.empty()) throw UsageError("mean_result: no results");
  AblationResult m;
  const double n = static_cast<double>(results.size());
  for (const auto& r : results) {
    m.harmony_pretrained += r.harmony_pretrained / n;
    m.harmony_scratch += r.harmony_scratch / n;
    m.harmony_avg_pool += r.harmony_avg_pool / n;
    m.harmony_max_pool += r.harmony_max_pool / n;
    m.direction_pretrained += r.direction_pretrained / n;
    m.direction_scratch += r.direction_scratch / n;
    m.fusion.fused_accuracy += r.fusion.fused_accuracy / n;
    m.fusion.short_term_accuracy += r.fusion.short_term_accuracy / n;
    m.fusion.fused_class_accuracy += r.fusion.fused_class_accuracy / n;
    m.fusion.short_term_class_accuracy += r.fusion.short_term_class_accuracy / n;
    m.seconds += r.seconds;  // total, not mean
  }
  return m;
}

}  // namespace objtx::experiment
