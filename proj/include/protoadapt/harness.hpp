#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "protoadapt/checkpoint.hpp"
#include "protoadapt/config.hpp"
#include "protoadapt/episodes.hpp"
#include "protoadapt/meta_train.hpp"
#include "protoadapt/target_adapt.hpp"

namespace protoadapt::bench {

struct Metrics {
  std::vector<double> per_task_accuracy;
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample std / sqrt(n)
  int n_tasks = 0;
  std::string config_hash;
  bool ci_degenerate = false;  // n == 1: ci reported as 0
};

Metrics aggregate(std::span<const double> per_task_accuracy,
                  std::string config_hash);

struct TaskRecord {
  int index = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::string trace_csv;
};

struct EvalOutput {
  Metrics metrics;
  std::vector<TaskRecord> tasks;
};

/// Scores a checkpoint on eval.n_tasks seeded target tasks: fine-tune per
/// task from a cloned checkpoint, then compare the final predictions against
/// the held-out query labels. Tasks run on `workers` threads; aggregation is
/// a fold in task-index order, so the result does not depend on the worker
/// count. Any task failure aborts the run.
EvalOutput evaluate(const model::EncoderParams& theta,
                    const model::PcnParams& phi, const data::Domain& target,
                    const cfg::RunConfig& c,
                    std::span<const data::Episode> episodes = {});

/// Scores one already-sampled episode; the building block of evaluate() and
/// of the replay subcommand.
TaskRecord evaluate_task(const model::EncoderParams& theta,
                         const model::PcnParams& phi,
                         const data::Episode& episode, const cfg::RunConfig& c,
                         int index, std::uint64_t seed);

struct VariantOutcome {
  std::string id;
  Metrics metrics;
};

/// Runs every requested ablation variant through the full pipeline
/// (meta-training plus evaluation) on the identical seeded task list.
/// Variants whose meta-training stage is configured identically share one
/// trained checkpoint.
std::vector<VariantOutcome> run_ablation(const cfg::RunConfig& base,
                                         std::span<const std::string> ids);

struct SweepPoint {
  double value = 0.0;
  Metrics metrics;
};

/// Re-runs the pipeline for each grid value of one hyper-parameter
/// (alpha0 | epsilon | lambda_coh | lambda_dis) over the fixed task list.
std::vector<SweepPoint> sweep(const cfg::RunConfig& base,
                              std::string_view param,
                              std::span<const double> grid);
cfg::RunConfig with_sweep_value(cfg::RunConfig c, std::string_view param,
                                double value);

std::string metrics_csv(const EvalOutput& out);
std::string summary_json(const Metrics& m, std::string_view variant_id);
std::string ablation_csv(std::span<const VariantOutcome> rows);
std::string ablation_markdown(std::span<const VariantOutcome> rows);
std::string sweep_csv(std::string_view param, std::span<const SweepPoint> rows);

}  // namespace protoadapt::bench
