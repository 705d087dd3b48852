#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "objtx/errors.hpp"
#include "objtx/finetune.hpp"
#include "objtx/io.hpp"
#include "objtx/preprocess.hpp"
#include "objtx/pretrain.hpp"
#include "objtx/synthetic.hpp"
#include "objtx/verify.hpp"

namespace objtx::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string corpus_path;
  std::string raw_path;
  std::string checkpoint_path;
  std::string task;
  std::string backbone;
  std::string split = "test";
};

struct PrepSettings {
  double iou_threshold = 0.5;
  double shot_threshold = 0.3;
  double span_length = 60.0;
  double stride = 1.0;
};

// Every section is parsed up front so a typo anywhere in the file fails
// before any work starts.
struct Settings {
  std::uint64_t seed = 0;
  std::string dtype = "f32";
  model::ModelConfig model;
  synth::GenConfig gen;
  pretrain::PretrainConfig pretrain;
  finetune::FinetuneConfig finetune;
  finetune::FusionConfig fusion;
  PrepSettings prep;
};

Settings load_settings(const Options& o) {
  io::Config c;
  if (!o.config_path.empty()) c = io::Config::load(o.config_path);
  Settings s;
  s.seed = o.seed ? *o.seed : c.get_uint("seed", 0);
  s.dtype = c.get_string("dtype", s.dtype);
  if (s.dtype != "f32" && s.dtype != "f64") throw ConfigError("dtype must be f32 or f64");
  s.model = io::model_config(c);
  s.gen = io::gen_config(c);
  s.pretrain = io::pretrain_config(c);
  s.finetune = io::finetune_config(c);
  s.fusion = io::fusion_config(c);
  s.prep.iou_threshold = c.get_double("prep.iou_threshold", s.prep.iou_threshold);
  s.prep.shot_threshold = c.get_double("prep.shot_threshold", s.prep.shot_threshold);
  s.prep.span_length = c.get_double("prep.span_length", s.prep.span_length);
  s.prep.stride = c.get_double("prep.stride", s.prep.stride);
  if (s.prep.span_length <= 0.0 || s.prep.stride <= 0.0) throw ConfigError("prep: invalid span settings");
  c.check_all_used();

  auto section_seed = [&](const char* key) { return o.seed ? *o.seed : c.has(key) ? c.get_uint(key, 0) : s.seed; };
  s.gen.seed = section_seed("gen.seed");
  s.pretrain.seed = section_seed("pretrain.seed");
  s.finetune.seed = section_seed("finetune.seed");
  s.fusion.seed = section_seed("fusion.seed");
  return s;
}

fs::path prepare_out(const Options& o) {
  fs::path dir(o.out_dir);
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw DataError("cannot write " + p.string());
  return f;
}

void write_json(const fs::path& p, const json& j) {
  auto f = open_out(p);
  f << j.dump(2) << '\n';
}

void check_dims(const model::ModelConfig& m, const track::Corpus& corpus) {
  for (const auto& v : corpus.videos)
    for (const auto& tr : v.tracks)
      for (const auto& d : tr.detections) {
        if (d.z.size() != m.d_z)
          throw ConfigError("model.d_z=" + std::to_string(m.d_z) + " but the corpus has features of width " +
                            std::to_string(d.z.size()));
        if (d.pseudo_label && d.pseudo_label->size() != m.d_label)
          throw ConfigError("model.d_label=" + std::to_string(m.d_label) +
                            " but the corpus has pseudo-labels of width " + std::to_string(d.pseudo_label->size()));
        return;
      }
}

bool is_track_task(const track::Corpus& corpus, const std::string& task) {
  for (const auto& l : corpus.labels)
    if (l.task == task) return l.track_id.has_value();
  throw DataError("corpus has no labels for task '" + task + "'");
}

finetune::TaskSpec task_spec(const track::Corpus& corpus, const std::string& task) {
  finetune::TaskSpec spec;
  spec.name = task;
  if (task == synth::kTaskThemeScore) {
    spec.kind = finetune::TaskKind::kRegression;
    return spec;
  }
  double top = 1.0;
  for (const auto& l : corpus.labels)
    if (l.task == task && !l.track_id) top = std::max(top, l.value);
  spec.n_classes = static_cast<std::size_t>(top) + 1;
  return spec;
}

std::vector<std::size_t> split_indices(const finetune::Splits& s, const std::string& which, std::size_t n) {
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  if (which == "test") return s.test;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

template <typename Real>
model::ObjectTransformer<Real> initial_model(const Options& o, const Settings& s) {
  if (!o.checkpoint_path.empty()) return io::load_checkpoint<Real>(o.checkpoint_path);
  return model::ObjectTransformer<Real>(s.model, num::SeedSequence(s.seed).derive("init"));
}

// ---- subcommands -----------------------------------------------------------

int cmd_gen_synth(const Options& o, const Settings& s, std::ostream& out) {
  const auto dir = prepare_out(o);
  const auto gen = synth::generate_corpus(s.gen);
  io::save_corpus(dir / "corpus.jsonl", gen.corpus);

  io::RawCorpus raw;
  const num::SeedSequence seeds(s.gen.seed);
  for (std::size_t i = 0; i < gen.corpus.videos.size(); ++i) {
    const auto& v = gen.corpus.videos[i];
    io::RawVideo rv{v.video_id, v.movie_id, v.segment_id, v.duration, {}, {}};
    rv.frames = synth::render_raw_stream(v, seeds.derive("render.stream", i));
    rv.signatures = synth::render_signatures(v, seeds.derive("render.signature", i));
    raw.videos.push_back(std::move(rv));
  }
  for (const auto& l : gen.corpus.labels)
    if (!l.track_id) raw.labels.push_back(l);
  io::save_raw(dir / "raw.jsonl", raw);

  auto metrics = open_out(dir / "metrics.jsonl");
  io::MetricsLog log(metrics);
  std::size_t tracks = 0, detections = 0;
  for (const auto& v : gen.corpus.videos) {
    tracks += v.tracks.size();
    for (const auto& tr : v.tracks) detections += tr.detections.size();
  }
  log.split("all", "videos", static_cast<double>(gen.corpus.videos.size()));
  log.split("all", "tracks", static_cast<double>(tracks));
  log.split("all", "detections", static_cast<double>(detections));
  out << "wrote " << gen.corpus.videos.size() << " videos to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_preprocess(const Options& o, const Settings& s, std::ostream& out) {
  if (o.raw_path.empty()) throw UsageError("preprocess needs --raw");
  const auto raw = io::load_raw(o.raw_path);
  const auto dir = prepare_out(o);
  track::Corpus corpus;
  corpus.labels = raw.labels;
  auto index = open_out(dir / "spans.jsonl");
  std::size_t n_spans = 0;
  for (const auto& rv : raw.videos) {
    track::Video v{rv.video_id, rv.movie_id, rv.segment_id, rv.duration, {}, {}};
    v.shots = prep::detect_shots(rv.signatures, s.prep.shot_threshold, rv.duration);
    v.tracks = prep::assign_shots(prep::link_tracks(rv.frames, s.prep.iou_threshold), v.shots);
    if (auto bad = track::validate_video(v))
      throw DataError("video " + std::to_string(v.video_id) + ": " + bad->message + " at " + bad->path);
    for (const auto& span : prep::enumerate_spans(v, s.prep.span_length, s.prep.stride)) {
      const auto capped = prep::truncate_tokens(span, s.model.token_cap, s.model.include_objects);
      json j;
      j["kind"] = "span";
      j["video_id"] = v.video_id;
      j["segment_id"] = v.segment_id;
      j["start_time"] = span.start_time;
      j["length"] = span.length;
      j["truncated"] = span.truncated;
      j["tokens"] = track::count_tokens(capped, s.model.include_objects);
      index << j.dump() << '\n';
      ++n_spans;
    }
    corpus.videos.push_back(std::move(v));
  }
  io::save_corpus(dir / "corpus.jsonl", corpus);
  auto metrics = open_out(dir / "metrics.jsonl");
  io::MetricsLog log(metrics);
  log.split("all", "videos", static_cast<double>(corpus.videos.size()));
  log.split("all", "spans", static_cast<double>(n_spans));
  out << "linked " << corpus.videos.size() << " videos, indexed " << n_spans << " spans\n";
  return kExitOk;
}

template <typename Real>
int cmd_pretrain(const Options& o, const Settings& s, std::ostream& out) {
  if (o.corpus_path.empty()) throw UsageError("pretrain needs --corpus");
  const auto corpus = io::load_corpus(o.corpus_path);
  auto m = initial_model<Real>(o, s);
  check_dims(m.config(), corpus);
  const auto dir = prepare_out(o);
  auto metrics = open_out(dir / "metrics.jsonl");
  io::MetricsLog log(metrics);
  const auto trace = pretrain::pretrain_loop<Real>(corpus.videos, m, s.pretrain, [&](const pretrain::TraceRecord& r) {
    log.step(r.step, "lr", r.lr);
    log.step(r.step, "mask_loss", r.mask_loss);
    if (s.pretrain.objective == pretrain::Objective::kMaskCompat) log.step(r.step, "compat_loss", r.compat_loss);
    log.step(r.step, "loss", r.total);
  });
  io::save_checkpoint(dir / "checkpoint.bin", m);
  out << "pretrained " << trace.size() << " steps, final loss " << (trace.empty() ? 0.0 : trace.back().total)
      << "\n";
  return kExitOk;
}

template <typename Real>
int finetune_fusion(const Options& o, const Settings& s, const track::Corpus& corpus, const finetune::Splits& splits,
                    std::ostream& out) {
  auto m = initial_model<Real>(o, s);
  check_dims(m.config(), corpus);
  const auto& fc = s.finetune;
  const auto train = finetune::fusion_examples(corpus, splits.train, o.task, fc.span_length, fc.stride);
  const auto test = finetune::fusion_examples(corpus, splits.test, o.task, fc.span_length, fc.stride);
  if (train.empty() || test.empty()) throw DataError("no per-track examples with scores for '" + o.task + "'");
  const auto dir = prepare_out(o);
  auto metrics = open_out(dir / "metrics.jsonl");
  io::MetricsLog log(metrics);
  const auto trace = finetune::train_fusion<Real>(train, m, s.fusion);
  for (std::size_t i = 0; i < trace.size(); ++i) log.step(i, "fusion_loss", trace[i]);
  const auto scores = finetune::evaluate_fusion<Real>(test, m);
  log.split("test", "fused_accuracy", scores.fused_accuracy);
  log.split("test", "short_term_accuracy", scores.short_term_accuracy);
  log.split("test", "fused_class_accuracy", scores.fused_class_accuracy);
  log.split("test", "short_term_class_accuracy", scores.short_term_class_accuracy);
  io::save_checkpoint(dir / "checkpoint.bin", m);
  json report;
  report["task"] = o.task;
  report["model"] = "late-fusion";
  report["test"] = {{"fused_accuracy", scores.fused_accuracy},
                    {"short_term_accuracy", scores.short_term_accuracy},
                    {"fused_class_accuracy", scores.fused_class_accuracy},
                    {"short_term_class_accuracy", scores.short_term_class_accuracy},
                    {"examples", test.size()}};
  write_json(dir / "report.json", report);
  out << o.task << ": fused " << scores.fused_accuracy << " vs short-term " << scores.short_term_accuracy << "\n";
  return kExitOk;
}

template <typename Real>
int cmd_finetune(const Options& o, Settings s, std::ostream& out, bool baseline) {
  if (o.corpus_path.empty()) throw UsageError("needs --corpus");
  if (o.task.empty()) throw UsageError("needs --task");
  if (!o.backbone.empty()) s.finetune.backbone = finetune::parse_backbone(o.backbone);
  if (baseline && s.finetune.backbone == finetune::Backbone::kTransformer) {
    if (o.backbone.empty())
      s.finetune.backbone = finetune::Backbone::kAvgPool;
    else
      throw UsageError("baseline takes avg-pool, max-pool or short-term");
  }
  const auto corpus = io::load_corpus(o.corpus_path);
  const auto splits = finetune::split_dataset(corpus.videos, {0.7, 0.15, 0.15}, true, s.seed);
  if (is_track_task(corpus, o.task)) {
    if (baseline) throw UsageError("baseline runs video-level tasks only");
    return finetune_fusion<Real>(o, s, corpus, splits, out);
  }

  const auto spec = task_spec(corpus, o.task);
  const auto labels = finetune::task_labels(corpus, spec);
  const auto init = initial_model<Real>(o, s);
  check_dims(init.config(), corpus);
  const auto dir = prepare_out(o);
  auto res = finetune::run_finetune<Real>(corpus.videos, labels, splits, init, spec, s.finetune);

  const char* metric = spec.kind == finetune::TaskKind::kClassification ? "accuracy" : "mse";
  auto metrics = open_out(dir / "metrics.jsonl");
  io::MetricsLog log(metrics);
  json cells = json::array();
  for (const auto& c : res.grid.cells) {
    const std::map<std::string, std::int64_t> ctx{{"epochs", static_cast<std::int64_t>(c.epochs)},
                                                  {"batch", static_cast<std::int64_t>(c.batch)}};
    log.split("val", metric, c.val_score, ctx);
    cells.push_back({{"epochs", c.epochs}, {"batch", c.batch}, {"val", c.val_score}});
  }
  const auto& chosen = res.grid.cells[res.grid.chosen];
  log.split("test", metric, res.grid.test_score,
            {{"epochs", static_cast<std::int64_t>(chosen.epochs)}, {"batch", static_cast<std::int64_t>(chosen.batch)}});
  io::save_checkpoint(dir / "checkpoint.bin", res.model);

  json report;
  report["task"] = spec.name;
  report["backbone"] = std::string(finetune::to_string(s.finetune.backbone));
  report["metric"] = metric;
  report["chosen"] = {{"epochs", chosen.epochs}, {"batch", chosen.batch}, {"val", chosen.val_score}};
  report["test"] = res.grid.test_score;
  report["cells"] = std::move(cells);
  write_json(dir / "report.json", report);
  out << spec.name << " (" << finetune::to_string(s.finetune.backbone) << "): chosen " << chosen.epochs
      << " epochs, batch " << chosen.batch << ", test " << metric << " " << res.grid.test_score << "\n";
  return kExitOk;
}

template <typename Real>
int cmd_eval(const Options& o, Settings s, std::ostream& out) {
  if (o.corpus_path.empty() || o.checkpoint_path.empty() || o.task.empty())
    throw UsageError("eval needs --corpus, --checkpoint and --task");
  if (!o.backbone.empty()) s.finetune.backbone = finetune::parse_backbone(o.backbone);
  const auto corpus = io::load_corpus(o.corpus_path);
  auto m = io::load_checkpoint<Real>(o.checkpoint_path);
  check_dims(m.config(), corpus);
  const auto splits = finetune::split_dataset(corpus.videos, {0.7, 0.15, 0.15}, true, s.seed);
  const auto idx = split_indices(splits, o.split, corpus.videos.size());
  const auto dir = prepare_out(o);
  auto metrics = open_out(dir / "metrics.jsonl");
  io::MetricsLog log(metrics);
  json report;
  report["task"] = o.task;
  report["split"] = o.split;

  if (is_track_task(corpus, o.task)) {
    if (!m.config().fusion_inputs) throw UsageError("checkpoint has no fusion layer");
    const auto ex = finetune::fusion_examples(corpus, idx, o.task, s.finetune.span_length, s.finetune.stride);
    if (ex.empty()) throw DataError("no examples in split " + o.split);
    const auto scores = finetune::evaluate_fusion<Real>(ex, m);
    log.split(o.split, "fused_accuracy", scores.fused_accuracy);
    log.split(o.split, "short_term_accuracy", scores.short_term_accuracy);
    report["fused_accuracy"] = scores.fused_accuracy;
    report["short_term_accuracy"] = scores.short_term_accuracy;
    out << o.task << " " << o.split << ": fused " << scores.fused_accuracy << "\n";
  } else {
    const auto spec = task_spec(corpus, o.task);
    if (m.config().task_outputs != spec.outputs())
      throw UsageError("checkpoint task head has " + std::to_string(m.config().task_outputs) + " outputs, task needs " +
                       std::to_string(spec.outputs()));
    const auto labels = finetune::task_labels(corpus, spec);
    const double score = finetune::evaluate<Real>(corpus.videos, labels, idx, m, spec, s.finetune.backbone,
                                                  s.finetune.span_length, s.finetune.stride);
    const char* metric = spec.kind == finetune::TaskKind::kClassification ? "accuracy" : "mse";
    log.split(o.split, metric, score);
    report["backbone"] = std::string(finetune::to_string(s.finetune.backbone));
    report[metric] = score;
    out << o.task << " " << o.split << ": " << metric << " " << score << "\n";
  }
  write_json(dir / "report.json", report);
  return kExitOk;
}

int cmd_gradcheck(const Options& o, const Settings& s, std::ostream& out) {
  const auto dir = prepare_out(o);
  const auto cases = verify::gradcheck_suite(s.seed);
  auto metrics = open_out(dir / "metrics.jsonl");
  io::MetricsLog log(metrics);
  for (const auto& c : cases) {
    log.split("gradcheck", c.name, c.report.max_rel_err);
    out << (c.report.passed ? "ok   " : "FAIL ") << c.name << " max_rel_err=" << c.report.max_rel_err;
    if (!c.report.passed) out << " at " << c.report.worst_param << "[" << c.report.worst_index << "]";
    out << "\n";
  }
  return verify::all_passed(cases) ? kExitOk : kExitFailure;
}

template <typename Real>
int dispatch(const std::string& cmd, const Options& o, const Settings& s, std::ostream& out) {
  if (cmd == "pretrain") return cmd_pretrain<Real>(o, s, out);
  if (cmd == "finetune") return cmd_finetune<Real>(o, s, out, false);
  if (cmd == "baseline") return cmd_finetune<Real>(o, s, out, true);
  if (cmd == "eval") return cmd_eval<Real>(o, s, out);
  throw UsageError("unknown subcommand " + cmd);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Object-level transformer over tracked detections", args.empty() ? "objtx" : args[0]};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key=value settings file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "overrides every seed in the config");
    sub->add_option("--out", o.out_dir, "output directory")->required();
  };
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic corpus and its raw detection stream");
  common(gen);
  auto* pre = app.add_subcommand("preprocess", "link raw detections into tracks and index spans");
  common(pre);
  pre->add_option("--raw", o.raw_path, "raw detection file")->required()->check(CLI::ExistingFile);
  auto* pt = app.add_subcommand("pretrain", "self-supervised pretraining");
  common(pt);
  pt->add_option("--corpus", o.corpus_path)->required()->check(CLI::ExistingFile);
  pt->add_option("--checkpoint", o.checkpoint_path, "start from this checkpoint")->check(CLI::ExistingFile);
  auto* ft = app.add_subcommand("finetune", "grid-searched fine-tuning on a labeled task");
  auto* bl = app.add_subcommand("baseline", "pooling or short-term baseline on a labeled task");
  for (auto* sub : {ft, bl}) {
    common(sub);
    sub->add_option("--corpus", o.corpus_path)->required()->check(CLI::ExistingFile);
    sub->add_option("--checkpoint", o.checkpoint_path, "initial weights")->check(CLI::ExistingFile);
    sub->add_option("--task", o.task)->required();
    sub->add_option("--backbone", o.backbone)
        ->check(CLI::IsMember({"transformer", "avg-pool", "max-pool", "short-term"}));
  }
  auto* ev = app.add_subcommand("eval", "score a fine-tuned checkpoint");
  common(ev);
  ev->add_option("--corpus", o.corpus_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", o.checkpoint_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--task", o.task)->required();
  ev->add_option("--backbone", o.backbone)->check(CLI::IsMember({"transformer", "avg-pool", "max-pool", "short-term"}));
  ev->add_option("--split", o.split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  common(gc);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  const auto* sub = app.get_subcommands().front();
  if (sub->count("--seed")) o.seed = seed;
  const std::string cmd = sub->get_name();
  try {
    const Settings s = load_settings(o);
    if (cmd == "gen-synth") return cmd_gen_synth(o, s, out);
    if (cmd == "preprocess") return cmd_preprocess(o, s, out);
    if (cmd == "gradcheck") return cmd_gradcheck(o, s, out);
    return s.dtype == "f64" ? dispatch<double>(cmd, o, s, out) : dispatch<float>(cmd, o, s, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace objtx::cli
