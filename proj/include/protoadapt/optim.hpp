#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "protoadapt/model.hpp"

namespace protoadapt::optim {

enum class Kind { kSgd, kAdam };

Kind kind_from_string(std::string_view s);

struct Settings {
  Kind kind = Kind::kSgd;
  double lr = 0.01;
  double weight_decay = 0.0;
  // Adam moments; fixed defaults, only lr and weight decay are tuned.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// SGD:  p <- p - lr * (g + wd * p)
/// Adam: decoupled weight decay (p <- p - lr * wd * p) followed by the
/// bias-corrected moment update. One shared step counter; moment buffers are
/// sized on first use and keyed by slot order, so callers must pass the same
/// parameter list every step.
class Optimizer {
 public:
  explicit Optimizer(Settings s) : settings_(s) {}

  void step(std::span<const model::ParamRef> params,
            std::span<const std::vector<double>> grads);

  std::int64_t step_count() const { return t_; }
  const Settings& settings() const { return settings_; }

 private:
  Settings settings_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace protoadapt::optim
