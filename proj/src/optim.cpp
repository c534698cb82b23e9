#include "protoadapt/optim.hpp"

#include <cmath>

namespace protoadapt::optim {

Kind kind_from_string(std::string_view s) {
  if (s == "sgd") return Kind::kSgd;
  if (s == "adam") return Kind::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(s) +
                    "' (expected sgd or adam)");
}

void Optimizer::step(std::span<const model::ParamRef> params,
                     std::span<const std::vector<double>> grads) {
  if (params.size() != grads.size()) {
    throw DimensionError("optimizer: params/grads count mismatch");
  }
  for (std::size_t s = 0; s < params.size(); ++s) {
    if (params[s].value->size() != grads[s].size()) {
      throw DimensionError("optimizer: gradient size mismatch for " +
                           params[s].name);
    }
    if (!all_finite(grads[s])) {
      throw NumericError("optimizer: non-finite gradient for " +
                         params[s].name);
    }
  }

  if (settings_.kind == Kind::kSgd) {
    ++t_;
    for (std::size_t s = 0; s < params.size(); ++s) {
      std::vector<double>& p = *params[s].value;
      const std::vector<double>& g = grads[s];
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= settings_.lr * (g[i] + settings_.weight_decay * p[i]);
      }
    }
    return;
  }

  // Adam
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t s = 0; s < params.size(); ++s) {
      m_[s].assign(params[s].value->size(), 0.0);
      v_[s].assign(params[s].value->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw DimensionError("optimizer: slot count changed between steps");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
  for (std::size_t s = 0; s < params.size(); ++s) {
    std::vector<double>& p = *params[s].value;
    const std::vector<double>& g = grads[s];
    std::vector<double>& m = m_[s];
    std::vector<double>& v = v_[s];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] -= settings_.lr * settings_.weight_decay * p[i];
      m[i] = settings_.beta1 * m[i] + (1.0 - settings_.beta1) * g[i];
      v[i] = settings_.beta2 * v[i] + (1.0 - settings_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= settings_.lr * mhat / (std::sqrt(vhat) + settings_.eps);
    }
  }
}

}  // namespace protoadapt::optim
