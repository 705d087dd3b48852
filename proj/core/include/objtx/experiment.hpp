#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "objtx/finetune.hpp"
#include "objtx/model.hpp"
#include "objtx/pretrain.hpp"
#include "objtx/synthetic.hpp"

namespace objtx::experiment {

/// Everything one ablation run needs besides the seed.
struct AblationConfig {
  synth::GenConfig gen;
  model::ModelConfig model;
  pretrain::PretrainConfig pretrain;
  finetune::FinetuneConfig finetune;
  finetune::FusionConfig fusion;
};

/// Settings sized for a single CPU core: a 3-layer, 32-wide encoder and
/// learning rates raised to match the short schedules.
AblationConfig desk_ablation_config();

struct AblationResult {
  std::uint64_t seed = 0;
  // Test accuracy of the selected grid cell.
  double harmony_pretrained = 0.0;
  double harmony_scratch = 0.0;
  double harmony_avg_pool = 0.0;
  double harmony_max_pool = 0.0;
  double direction_pretrained = 0.0;
  double direction_scratch = 0.0;
  // Per-track role task on the test split.
  finetune::FusionScores fusion;
  double seconds = 0.0;
};

/// Generates a corpus, splits it by movie, pretrains on the training videos
/// and runs every comparison: pretrained vs scratch on harmony and
/// direction, transformer vs pooling on harmony, late fusion vs short-term
/// scores on the role task. `log` receives one line per finished stage.
AblationResult run_ablation(const AblationConfig& config, std::uint64_t seed,
                            const std::function<void(const std::string&)>& log = {});

/// Field-wise mean over seeds.
AblationResult mean_result(std::span<const AblationResult> results);

}  // namespace objtx::experiment
