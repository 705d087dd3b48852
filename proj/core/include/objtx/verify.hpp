#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "objtx/model.hpp"
#include "objtx/numerics/gradcheck.hpp"
#include "objtx/synthetic.hpp"

namespace objtx::verify {

struct GradcheckCase {
  std::string name;
  num::GradcheckReport report;
};

/// hidden 8, one layer, two heads; small enough for exhaustive checks.
model::ModelConfig tiny_model_config();

/// A few short segments whose feature and label widths match the tiny model.
synth::GenConfig tiny_gen_config(std::uint64_t seed = 0);

/// Finite-difference checks (64-bit) of every differentiable kernel and of
/// the tiny model under each training loss: masked prediction (train mode,
/// fixed dropout draws), compatibility, task head and late fusion.
std::vector<GradcheckCase> gradcheck_suite(std::uint64_t seed = 0, const num::GradcheckOptions& options = {});

inline bool all_passed(const std::vector<GradcheckCase>& cases) {
  for (const auto& c : cases)
    if (!c.report.passed) return false;
  return !cases.empty();
}

}  // namespace objtx::verify
