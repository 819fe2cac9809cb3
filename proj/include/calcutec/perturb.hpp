// Step-sequence perturbations: merging adjacent linked steps and dropping
// antecedents, so rendered derivations skip intermediate conclusions the way
// informal arguments do.
#pragma once

#include <vector>

#include "calcutec/proof.hpp"
#include "calcutec/rng.hpp"

namespace calcutec {

struct PerturbConfig {
  double p_merge = 0.25;  // chance to fuse a step into its linked predecessor
  double p_drop = 0.25;   // chance to drop each antecedent after the first step
};

// Left-to-right scan: when the previous retained step's consequent feeds the
// current step, a coin decides whether to fuse them. The fused step keeps the
// predecessor's antecedents, appends the current step's remaining ones (the
// linking symbol removed, duplicates skipped), and concludes the current
// step's consequent. A fused step can fuse again with its successor.
inline StepSequence random_merge(const StepSequence& steps, double p_merge, Rng& rng) {
  StepSequence result;
  result.reserve(steps.size());
  for (const auto& step : steps) {
    bool linked = false;
    if (!result.empty()) {
      for (Symbol a : step.antecedents)
        if (a == result.back().consequent) {
          linked = true;
          break;
        }
    }
    if (linked && rng.bernoulli(p_merge)) {
      Step& prev = result.back();
      const Symbol link = prev.consequent;
      for (Symbol a : step.antecedents) {
        if (a == link) continue;
        bool present = false;
        for (Symbol b : prev.antecedents)
          if (b == a) {
            present = true;
            break;
          }
        if (!present) prev.antecedents.push_back(a);
      }
      prev.consequent = step.consequent;
    } else {
      result.push_back(step);
    }
  }
  return result;
}

// Each antecedent after the first step is dropped independently. The first
// step is protected: it introduces the premise. A step may lose every
// antecedent and still assert its consequent.
inline StepSequence random_drop(const StepSequence& steps, double p_drop, Rng& rng) {
  StepSequence result;
  result.reserve(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i == 0) {
      result.push_back(steps[i]);
      continue;
    }
    Step kept;
    kept.consequent = steps[i].consequent;
    for (Symbol a : steps[i].antecedents)
      if (!rng.bernoulli(p_drop)) kept.antecedents.push_back(a);
    result.push_back(std::move(kept));
  }
  return result;
}

inline StepSequence perturb(const StepSequence& steps, const PerturbConfig& config, Rng& rng) {
  return random_drop(random_merge(steps, config.p_merge, rng), config.p_drop, rng);
}

}  // namespace calcutec
