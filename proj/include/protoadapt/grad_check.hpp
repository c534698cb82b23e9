#pragma once

#include <functional>
#include <span>
#include <vector>

#include "protoadapt/tensor.hpp"

namespace protoadapt::ad {

/// Builds a scalar loss on the given tape from one leaf tensor per parameter
/// block. Must be deterministic in the parameter values.
using LossBuilder =
    std::function<Tensor(Tape&, std::span<const Tensor> params)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_block = 0;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients against central finite differences,
/// coordinate by coordinate. The relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8). Throws NumericError if any loss
/// evaluation is non-finite.
GradCheckResult grad_check(const LossBuilder& build,
                           std::span<const std::vector<double>> params,
                           std::span<const Shape> shapes, double step);

}  // namespace protoadapt::ad
