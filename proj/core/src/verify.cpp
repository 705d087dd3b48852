#include "objtx/verify.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "objtx/finetune.hpp"
#include "objtx/numerics/ops.hpp"
#include "objtx/numerics/rng.hpp"
#include "objtx/preprocess.hpp"
#include "objtx/pretrain.hpp"

namespace objtx::verify {

namespace {

using num::Graph;
using num::Mode;
using num::ParamRegistry;
using num::Rng;
using num::Shape;
using num::Tensor;
using num::Var;
using R = double;

Tensor<R> random_tensor(Shape shape, Rng& rng, double offset = 0.0) {
  Tensor<R> t(shape);
  for (auto& x : t.data()) x = num::normal(rng) + offset;
  return t;
}

// Projects an output onto fixed random weights so every output element
// carries a distinct gradient.
Var<R> project(Var<R> out, const Tensor<R>& weights) {
  return num::sum(num::mul(out, out.graph->constant(weights)));
}

struct KernelCase {
  std::string name;
  std::vector<Shape> inputs;
  double offset = 0.0;  // added to every input value (log needs positives)
  std::function<Var<R>(Graph<R>&, std::vector<Var<R>>&)> forward;
};

num::GradcheckReport check_kernel(const KernelCase& kc, Rng& rng, const num::GradcheckOptions& options) {
  ParamRegistry<R> reg;
  for (std::size_t i = 0; i < kc.inputs.size(); ++i) {
    auto idx = reg.add("x" + std::to_string(i), kc.inputs[i], false);
    reg[idx].value = random_tensor(kc.inputs[i], rng, kc.offset);
  }
  // Output shape is found with one probe pass so the projection can match it.
  Tensor<R> weights;
  {
    Graph<R> g;
    std::vector<Var<R>> xs;
    for (auto& p : reg) xs.push_back(g.param(p));
    weights = random_tensor(kc.forward(g, xs).shape(), rng);
  }
  return num::gradcheck<R>(
      reg,
      [&](Graph<R>& g) {
        std::vector<Var<R>> xs;
        for (auto& p : reg) xs.push_back(g.param(p));
        return project(kc.forward(g, xs), weights);
      },
      options);
}

std::vector<KernelCase> kernel_cases(std::uint64_t seed) {
  const std::vector<std::uint8_t> key_mask{1, 0, 1, 1};
  const std::vector<std::size_t> rows{2, 0, 2};
  const std::vector<std::size_t> targets{1, 3, 0};
  std::vector<KernelCase> cases;
  auto add_case = [&](std::string name, std::vector<Shape> in, auto fn, double offset = 0.0) {
    cases.push_back({std::move(name), std::move(in), offset, fn});
  };
  using V = std::vector<Var<R>>;
  add_case("matmul", {{3, 4}, {4, 2}}, [](Graph<R>&, V& x) { return num::matmul(x[0], x[1]); });
  add_case("matmul_nt", {{3, 4}, {2, 4}}, [](Graph<R>&, V& x) { return num::matmul_nt(x[0], x[1]); });
  add_case("add_broadcast", {{3, 4}, {4}}, [](Graph<R>&, V& x) { return num::add(x[0], x[1]); });
  add_case("sub", {{3, 4}, {3, 4}}, [](Graph<R>&, V& x) { return num::sub(x[0], x[1]); });
  add_case("mul", {{3, 4}, {3, 4}}, [](Graph<R>&, V& x) { return num::mul(x[0], x[1]); });
  add_case("scale", {{3, 4}}, [](Graph<R>&, V& x) { return num::scale(x[0], R(-1.7)); });
  add_case("gelu", {{3, 4}}, [](Graph<R>&, V& x) { return num::gelu(x[0]); });
  add_case("log_clamped", {{3, 4}}, [](Graph<R>&, V& x) { return num::log_clamped(x[0], R(1e-3)); }, 5.0);
  add_case("softmax", {{3, 4}}, [](Graph<R>&, V& x) { return num::softmax(x[0]); });
  add_case("masked_softmax", {{3, 4}},
           [key_mask](Graph<R>&, V& x) { return num::masked_softmax(x[0], std::span<const std::uint8_t>(key_mask)); });
  add_case("layer_norm", {{3, 5}, {5}, {5}},
           [](Graph<R>&, V& x) { return num::layer_norm(x[0], x[1], x[2]); });
  add_case("dropout", {{3, 4}}, [seed](Graph<R>&, V& x) {
    Rng rng = num::SeedSequence(seed).stream("gradcheck.dropout");
    return num::dropout(x[0], 0.3, Mode::kTrain, rng);
  });
  add_case("select_rows", {{3, 4}},
           [rows](Graph<R>&, V& x) { return num::select_rows(x[0], std::span<const std::size_t>(rows)); });
  add_case("concat_rows", {{2, 3}, {1, 3}}, [](Graph<R>&, V& x) { return num::concat_rows<R>(x); });
  add_case("concat_cols", {{2, 3}, {2, 2}}, [](Graph<R>&, V& x) { return num::concat_cols<R>(x); });
  add_case("slice_cols", {{2, 5}}, [](Graph<R>&, V& x) { return num::slice_cols(x[0], 1, 3); });
  add_case("sum", {{3, 4}}, [](Graph<R>&, V& x) { return num::sum(x[0]); });
  add_case("mean", {{3, 4}}, [](Graph<R>&, V& x) { return num::mean(x[0]); });
  add_case("mean_rows", {{3, 4}}, [](Graph<R>&, V& x) { return num::mean_rows(x[0]); });
  add_case("max_rows", {{3, 4}}, [](Graph<R>&, V& x) { return num::max_rows(x[0]); });
  add_case("cross_entropy_logits", {{3, 4}}, [targets](Graph<R>&, V& x) {
    return num::cross_entropy_logits(x[0], std::span<const std::size_t>(targets));
  });
  add_case("bce_logits", {{3, 4}}, [](Graph<R>&, V& x) {
    auto t = Tensor<R>::matrix(3, 4, {1, 0, 0.5, 1, 0, 0, 1, 0.2, 1, 1, 0, 0});
    return num::bce_logits(x[0], t);
  });
  add_case("mse", {{3, 2}}, [](Graph<R>&, V& x) {
    return num::mse(x[0], Tensor<R>::matrix(3, 2, {0.5, -1, 2, 0, 1, 1}));
  });
  add_case("attention", {{3, 4}, {4, 4}, {4, 4}}, [key_mask, seed](Graph<R>&, V& x) {
    Rng rng = num::SeedSequence(seed).stream("gradcheck.attention");
    return model::attention(x[0], x[1], x[2], std::span<const std::uint8_t>(key_mask), 0.0, Mode::kEval, rng);
  });
  add_case("masked_loss", {{3, 4}}, [](Graph<R>&, V& x) {
    auto p = Tensor<R>::matrix(3, 4, {0.7, 0.1, 0.1, 0.1, 0.25, 0.25, 0.25, 0.25, 0, 0, 0.5, 0.5});
    return pretrain::masked_loss(num::softmax(x[0]), p);
  });
  add_case("infonce_batch", {{4, 3}}, [](Graph<R>&, V& x) {
    const std::vector<std::size_t> partner{1, 0, 3, 2};
    return pretrain::infonce_batch(x[0], std::span<const std::size_t>(partner));
  });
  return cases;
}

using Model = model::ObjectTransformer<R>;

num::GradcheckReport check_model(Model& m, const std::function<Var<R>(Graph<R>&)>& loss,
                                 const num::GradcheckOptions& options) {
  return num::gradcheck<R>(m.registry(), loss, options);
}

}  // namespace

model::ModelConfig tiny_model_config() {
  model::ModelConfig c;
  c.hidden = 8;
  c.layers = 1;
  c.heads = 2;
  c.head_dim = 4;
  c.ffn_dim = 16;
  c.dropout = 0.1;
  c.n_instance_slots = 8;
  c.n_shot_slots = 8;
  c.d_label = 4;
  c.d_z = 6;
  c.token_cap = 64;
  return c;
}

synth::GenConfig tiny_gen_config(std::uint64_t seed) {
  synth::GenConfig g;
  g.n_movies = 2;
  g.segments_per_movie = 2;
  g.segment_length_s = 40.0;
  g.instances_per_segment = 5;
  g.detections_per_instance = 2;
  g.d_z = 6;
  g.d_label = 4;
  g.theme_dim = 3;
  g.n_themes = 2;
  g.seed = seed;
  return g;
}

std::vector<GradcheckCase> gradcheck_suite(std::uint64_t seed, const num::GradcheckOptions& options) {
  std::vector<GradcheckCase> out;
  const num::SeedSequence seeds(seed);
  Rng rng = seeds.stream("gradcheck.inputs");
  for (const auto& kc : kernel_cases(seed)) out.push_back({"kernel." + kc.name, check_kernel(kc, rng, options)});

  const auto gen = synth::generate_corpus(tiny_gen_config(seed));
  const auto& videos = gen.corpus.videos;
  const double len = 20.0;
  std::vector<track::Span> spans;
  for (const auto& v : videos) spans.push_back(prep::cut_span(v, 0.0, len));

  Model base(tiny_model_config(), seeds.derive("gradcheck.init"));

  {
    Model m = base;
    out.push_back({"model.masked_prediction", check_model(m, [&](Graph<R>& g) {
                     Rng mask_rng = seeds.stream("gradcheck.mask");
                     Rng slot_rng = seeds.stream("gradcheck.instance");
                     Rng drop_rng = seeds.stream("gradcheck.dropout");
                     auto ex = pretrain::select_and_corrupt(g, spans[0], m, Mode::kTrain, mask_rng, slot_rng, 0.5);
                     auto h = model::encode(ex.tokens, m, Mode::kTrain, drop_rng);
                     auto rows = num::select_rows(h, std::span<const std::size_t>(ex.masked_rows));
                     return pretrain::masked_loss(model::head_mask(rows, m), ex.targets);
                   }, options)});
  }
  {
    Model m = base;
    out.push_back({"model.compatibility", check_model(m, [&](Graph<R>& g) {
                     Rng slot_rng = seeds.stream("gradcheck.instance");
                     Rng drop_rng = seeds.stream("gradcheck.dropout");
                     std::vector<Var<R>> cls;
                     for (const auto& s : spans) {
                       auto tokens = model::embed_tokens(g, s, m, Mode::kEval, slot_rng);
                       cls.push_back(model::cls_row(model::encode(tokens, m, Mode::kEval, drop_rng)));
                     }
                     auto v = model::head_compat(num::concat_rows<R>(cls), m, Mode::kEval, drop_rng);
                     const std::vector<std::size_t> partner{1, 0, 3, 2};
                     return pretrain::infonce_batch(v, std::span<const std::size_t>(partner));
                   }, options)});
  }
  {
    Model m = base;
    m.set_task_head(3, seeds.derive("gradcheck.task"));
    out.push_back({"model.task_head", check_model(m, [&](Graph<R>& g) {
                     Rng slot_rng = seeds.stream("gradcheck.instance");
                     Rng drop_rng = seeds.stream("gradcheck.dropout");
                     auto tokens = model::embed_tokens(g, spans[1], m, Mode::kTrain, slot_rng);
                     auto h = model::encode(tokens, m, Mode::kTrain, drop_rng);
                     auto logits = model::head_task(model::cls_row(h), m, Mode::kTrain, drop_rng);
                     const std::vector<std::size_t> target{2};
                     return num::cross_entropy_logits(logits, std::span<const std::size_t>(target));
                   }, options)});
  }
  {
    Model m = base;
    std::vector<std::size_t> all(videos.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    auto examples = finetune::fusion_examples(gen.corpus, all, synth::kTaskRole, len, 1.0);
    m.set_fusion_layer(examples.front().short_term.size(), seeds.derive("gradcheck.fusion"));
    const auto& ex = examples.front();
    Tensor<R> target(Shape{1, ex.short_term.size()});
    target[ex.label] = 1.0;
    out.push_back({"model.late_fusion", check_model(m, [&](Graph<R>& g) {
                     return num::bce_logits(finetune::ava_late_fusion(g, ex, m), target);
                   }, options)});
  }
  return out;
}

}  // namespace objtx::verify
