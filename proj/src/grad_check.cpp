#include "protoadapt/grad_check.hpp"

#include <cmath>

namespace protoadapt::ad {

namespace {

double eval_loss(const LossBuilder& build,
                 std::span<const std::vector<double>> params,
                 std::span<const Shape> shapes) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    leaves.push_back(tape.leaf(shapes[i], params[i], false));
  }
  const Tensor loss = build(tape, leaves);
  const double v = loss.scalar();
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: loss evaluated to a non-finite value");
  }
  return v;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& build,
                           std::span<const std::vector<double>> params,
                           std::span<const Shape> shapes, double step) {
  if (step <= 0.0) {
    throw DimensionError("grad_check: step must be positive");
  }
  if (params.size() != shapes.size()) {
    throw DimensionError("grad_check: params/shapes size mismatch");
  }

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      leaves.push_back(tape.leaf(shapes[i], params[i], true));
    }
    const Tensor loss = build(tape, leaves);
    if (!std::isfinite(loss.scalar())) {
      throw NumericError("grad_check: loss evaluated to a non-finite value");
    }
    tape.backward(loss);
    analytic.reserve(leaves.size());
    for (const Tensor& t : leaves) analytic.push_back(t.grad_or_zeros());
  }

  // Central differences, one coordinate at a time.
  GradCheckResult result;
  std::vector<std::vector<double>> work(params.begin(), params.end());
  for (std::size_t b = 0; b < work.size(); ++b) {
    for (std::size_t i = 0; i < work[b].size(); ++i) {
      const double saved = work[b][i];
      work[b][i] = saved + step;
      const double up = eval_loss(build, work, shapes);
      work[b][i] = saved - step;
      const double down = eval_loss(build, work, shapes);
      work[b][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[b][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_block = b;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace protoadapt::ad
