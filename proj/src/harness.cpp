#include "protoadapt/harness.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace protoadapt::bench {

Metrics aggregate(std::span<const double> per_task_accuracy,
                  std::string config_hash) {
  Metrics m;
  m.per_task_accuracy.assign(per_task_accuracy.begin(),
                             per_task_accuracy.end());
  m.n_tasks = static_cast<int>(per_task_accuracy.size());
  m.config_hash = std::move(config_hash);
  if (m.n_tasks == 0) {
    throw DimensionError("aggregate: no task accuracies");
  }
  double sum = 0.0;
  for (double a : per_task_accuracy) sum += a;
  m.mean = sum / m.n_tasks;
  if (m.n_tasks == 1) {
    m.ci95 = 0.0;
    m.ci_degenerate = true;
    return m;
  }
  double sq = 0.0;
  for (double a : per_task_accuracy) sq += (a - m.mean) * (a - m.mean);
  const double sample_std = std::sqrt(sq / (m.n_tasks - 1));
  m.ci95 = 1.96 * sample_std / std::sqrt(static_cast<double>(m.n_tasks));
  return m;
}

TaskRecord evaluate_task(const model::EncoderParams& theta,
                         const model::PcnParams& phi,
                         const data::Episode& episode, const cfg::RunConfig& c,
                         int index, std::uint64_t seed) {
  const adapt::EpisodeView view = adapt::strip_labels(episode);
  adapt::AdaptResult result =
      adapt::finetune_episode(theta, phi, view, c, seed);
  int correct = 0;
  for (std::size_t q = 0; q < episode.query.size(); ++q) {
    if (result.predictions[q] == episode.query[q].label) ++correct;
  }
  TaskRecord record;
  record.index = index;
  record.seed = seed;
  record.accuracy =
      static_cast<double>(correct) / static_cast<double>(episode.query.size());
  record.trace_csv = adapt::trace_csv(result.trace);
  return record;
}

EvalOutput evaluate(const model::EncoderParams& theta,
                    const model::PcnParams& phi, const data::Domain& target,
                    const cfg::RunConfig& c,
                    std::span<const data::Episode> episodes) {
  const int n_tasks = episodes.empty() ? c.eval.n_tasks
                                       : static_cast<int>(episodes.size());
  int workers = c.eval.workers > 0
                    ? c.eval.workers
                    : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  workers = std::min(workers, n_tasks);

  std::vector<TaskRecord> records(static_cast<std::size_t>(n_tasks));
  std::atomic<int> next{0};
  std::mutex failure_mutex;
  std::exception_ptr failure;

  auto run_task = [&](int t) {
    const std::uint64_t seed =
        derive_seed(c.seed, "eval", static_cast<std::uint64_t>(t));
    const data::Episode episode =
        episodes.empty()
            ? data::sample_episode(target, c.episode.n_way, c.episode.k_shot,
                                   c.episode.q_per_class, seed)
            : episodes[static_cast<std::size_t>(t)];
    records[static_cast<std::size_t>(t)] =
        evaluate_task(theta, phi, episode, c, t, seed);
  };

  if (workers == 1) {
    for (int t = 0; t < n_tasks; ++t) run_task(t);
  } else {
    auto worker = [&] {
      for (;;) {
        const int t = next.fetch_add(1);
        if (t >= n_tasks) return;
        try {
          run_task(t);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::vector<double> accuracies;
  accuracies.reserve(records.size());
  for (const TaskRecord& r : records) accuracies.push_back(r.accuracy);
  EvalOutput out;
  out.metrics = aggregate(accuracies, cfg::config_hash(c));
  out.tasks = std::move(records);
  return out;
}

std::vector<VariantOutcome> run_ablation(const cfg::RunConfig& base,
                                         std::span<const std::string> ids) {
  // Variants that only change adaptation settings share the meta-trained
  // checkpoint; paired task seeds come from the shared root seed.
  std::map<std::string, train::MetaTrainResult> trained;
  std::vector<VariantOutcome> outcomes;
  for (const std::string& id : ids) {
    const cfg::RunConfig vc = cfg::apply_variant(base, id);
    const std::string stage = cfg::meta_stage_hash(vc);
    auto it = trained.find(stage);
    if (it == trained.end()) {
      const data::Benchmark bench = data::make_benchmark(vc);
      it = trained.emplace(stage, train::meta_train(vc, bench.source)).first;
    }
    const data::Benchmark bench = data::make_benchmark(vc);
    const EvalOutput out =
        evaluate(it->second.theta, it->second.phi, bench.target, vc);
    outcomes.push_back({id, out.metrics});
  }
  return outcomes;
}

cfg::RunConfig with_sweep_value(cfg::RunConfig c, std::string_view param,
                                double value) {
  if (param == "alpha0") {
    c.adapt.alpha0 = value;
  } else if (param == "epsilon") {
    c.adapt.epsilon = value;
  } else if (param == "lambda_coh") {
    c.loss.lambda_coh = value;
  } else if (param == "lambda_dis") {
    c.loss.lambda_dis = value;
  } else {
    throw ConfigError("sweep: unknown parameter '" + std::string(param) +
                      "' (expected alpha0, epsilon, lambda_coh, lambda_dis)");
  }
  cfg::validate(c);
  return c;
}

std::vector<SweepPoint> sweep(const cfg::RunConfig& base,
                              std::string_view param,
                              std::span<const double> grid) {
  if (grid.empty()) {
    throw ConfigError("sweep: empty grid");
  }
  std::map<std::string, train::MetaTrainResult> trained;
  std::vector<SweepPoint> points;
  for (double value : grid) {
    const cfg::RunConfig vc = with_sweep_value(base, param, value);
    const std::string stage = cfg::meta_stage_hash(vc);
    auto it = trained.find(stage);
    if (it == trained.end()) {
      const data::Benchmark bench = data::make_benchmark(vc);
      it = trained.emplace(stage, train::meta_train(vc, bench.source)).first;
    }
    const data::Benchmark bench = data::make_benchmark(vc);
    const EvalOutput out =
        evaluate(it->second.theta, it->second.phi, bench.target, vc);
    points.push_back({value, out.metrics});
  }
  return points;
}

std::string metrics_csv(const EvalOutput& out) {
  std::string s = "task_index,seed,accuracy\n";
  for (const TaskRecord& r : out.tasks) {
    s += std::to_string(r.index);
    s += ',';
    s += std::to_string(r.seed);
    s += ',';
    s += format_double(r.accuracy);
    s += '\n';
  }
  return s;
}

std::string summary_json(const Metrics& m, std::string_view variant_id) {
  std::string s = "{\"config_hash\":\"" + m.config_hash + "\"";
  s += ",\"n_tasks\":" + std::to_string(m.n_tasks);
  s += ",\"mean\":" + format_double(m.mean);
  s += ",\"ci95\":" + format_double(m.ci95);
  s += ",\"ci95_degenerate\":" + std::string(m.ci_degenerate ? "true" : "false");
  s += ",\"variant_id\":\"" + std::string(variant_id) + "\"}\n";
  return s;
}

std::string ablation_csv(std::span<const VariantOutcome> rows) {
  std::string s = "variant,mean,ci95,n_tasks\n";
  for (const VariantOutcome& r : rows) {
    s += r.id;
    s += ',';
    s += format_double(r.metrics.mean);
    s += ',';
    s += format_double(r.metrics.ci95);
    s += ',';
    s += std::to_string(r.metrics.n_tasks);
    s += '\n';
  }
  return s;
}

std::string ablation_markdown(std::span<const VariantOutcome> rows) {
  char buf[64];
  std::string s = "| variant | accuracy |\n|---|---|\n";
  for (const VariantOutcome& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.2f (%.2f)", 100.0 * r.metrics.mean,
                  100.0 * r.metrics.ci95);
    s += "| " + r.id + " | " + buf + " |\n";
  }
  return s;
}

std::string sweep_csv(std::string_view param,
                      std::span<const SweepPoint> rows) {
  std::string s = std::string(param) + ",mean,ci95,n_tasks\n";
  for (const SweepPoint& r : rows) {
    s += format_double(r.value);
    s += ',';
    s += format_double(r.metrics.mean);
    s += ',';
    s += format_double(r.metrics.ci95);
    s += ',';
    s += std::to_string(r.metrics.n_tasks);
    s += '\n';
  }
  return s;
}

}  // namespace protoadapt::bench
