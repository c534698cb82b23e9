#pragma once

#include <functional>
#include <span>
#include <vector>

#include "protoadapt/config.hpp"
#include "protoadapt/episodes.hpp"
#include "protoadapt/losses.hpp"
#include "protoadapt/model.hpp"

namespace protoadapt::adapt {

/// What the adapter is allowed to see: labeled support, unlabeled query.
/// Built by stripping the query labels so the transductive contract holds by
/// construction.
struct EpisodeView {
  int n_way = 0;
  int k_shot = 0;
  std::vector<data::LabeledVec> support;
  std::vector<std::vector<double>> query_inputs;
};

EpisodeView strip_labels(const data::Episode& episode);

/// Per-query running distance vectors and the annealed mixing coefficient.
struct WmaState {
  std::vector<std::vector<double>> h_tilde;  // one [N] row per query, zeros
  double alpha = 0.0;
  int iter = 0;
};

/// Geometric annealing of the mixing coefficient.
double anneal_alpha(double alpha_prev, double gamma);

/// h_tilde <- alpha * h + (1 - alpha) * h_tilde, elementwise.
void wma_update(std::vector<double>& h_tilde, std::span<const double> h,
                double alpha);

/// Soft pseudo-label: softmax over the negated smoothed distances
/// (max-shift stabilized, value level).
std::vector<double> pseudo_label_row(std::span<const double> h_tilde);

struct TraceRow {
  int iter = 0;
  double alpha = 0.0;
  int n_confident = 0;
  double ce_support = 0.0;
  double ce_transductive = 0.0;
  double l_dis = 0.0;
  double l_coh_ft = 0.0;
  double total = 0.0;
};

struct AdaptResult {
  model::EncoderParams theta;
  std::vector<int> predictions;  // per query, episode class index
  std::vector<TraceRow> trace;
};

/// Observation hook for tests: called once per iteration with the raw and
/// smoothed distance rows of every query.
using AdaptObserver = std::function<void(
    int iter, double alpha, const std::vector<std::vector<double>>& h,
    const std::vector<std::vector<double>>& h_tilde)>;

/// Transductive fine-tuning of the encoder on one target task. Per
/// iteration: recompute prototypes from the current encoder (clustering
/// first when the shot count exceeds the prototype network input), anneal
/// alpha, refresh the smoothed distance vector and pseudo-label of every
/// query, assemble the joint loss with the confidence gate, and take one
/// gradient step on the encoder. The prototype network never moves.
///
/// With adapt.max_iters == 0 the encoder is returned untouched and
/// predictions fall back to nearest-prototype classification.
AdaptResult finetune_episode(model::EncoderParams theta,
                             const model::PcnParams& phi,
                             const EpisodeView& view, const cfg::RunConfig& c,
                             std::uint64_t episode_seed,
                             const AdaptObserver& observer = nullptr);

std::string trace_csv(std::span<const TraceRow> rows);

}  // namespace protoadapt::adapt
