#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoadapt/grad_check.hpp"

namespace protoadapt::bench {

struct LossTermCheck {
  std::string term;
  double max_rel_err = 0.0;
};

/// Finite-difference verification of every loss term (query CE, support CE,
/// discriminative, cohesive on query and support, gated transductive CE, and
/// both joint losses) against the reverse-mode gradients, over small seeded
/// episodes with all encoder and prototype-network parameters perturbed.
/// Episodes whose ReLU pre-activations sit near the kink are skipped
/// deterministically, since central differences are undefined across it.
std::vector<LossTermCheck> gradcheck_losses(int n_episodes, double step,
                                            std::uint64_t seed);

}  // namespace protoadapt::bench
