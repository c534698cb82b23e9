#pragma once

#include <vector>

#include "protoadapt/config.hpp"
#include "protoadapt/episodes.hpp"
#include "protoadapt/losses.hpp"
#include "protoadapt/model.hpp"
#include "protoadapt/optim.hpp"

namespace protoadapt::train {

struct CurveRow {
  int iter = 0;
  double ce_query = 0.0;
  double l_dis = 0.0;
  double l_coh = 0.0;
  double total = 0.0;
};

struct MetaTrainResult {
  model::EncoderParams theta;
  model::PcnParams phi;
  std::vector<CurveRow> curve;
};

/// Support-CE adaptation of the encoder: max_initers plain gradient steps,
/// prototypes recomputed from the current encoder each step, prototype
/// network frozen. Returns the updated encoder.
model::EncoderParams inner_adapt(model::EncoderParams theta,
                                 const model::PcnParams& phi,
                                 const data::Episode& episode,
                                 const cfg::RunConfig& c,
                                 std::uint64_t episode_seed);

/// One optimizer step on the joint episodic loss. In PCN mode only the
/// prototype network moves (gradients reach it through the prototypes); in
/// mean mode the encoder is the only learnable part and moves instead.
/// With meta.outer_updates_theta both move.
loss::Breakdown outer_step(model::EncoderParams& theta, model::PcnParams& phi,
                           const data::Episode& episode,
                           const cfg::RunConfig& c, optim::Optimizer& opt,
                           std::uint64_t episode_seed);

/// Episodic source-domain training: sample episode, adapt the encoder on the
/// support set, then step the prototype network on the joint loss. The
/// encoder persists across episodes unless meta.reset_theta_per_episode.
MetaTrainResult meta_train(const cfg::RunConfig& c, const data::Domain& source);

std::string curve_csv(std::span<const CurveRow> rows);

}  // namespace protoadapt::train
