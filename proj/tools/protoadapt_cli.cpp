// Command-line entry point: benchmark generation, meta-training, transductive
// evaluation, ablations, hyper-parameter sweeps, gradient checking, and
// single-episode replay. Every artifact lands under <out_dir>/<config_hash>/
// and embeds the materialized config, so any report can be regenerated from
// its echo and root seed.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "protoadapt/checkpoint.hpp"
#include "protoadapt/config.hpp"
#include "protoadapt/episodes.hpp"
#include "protoadapt/grad_check.hpp"
#include "protoadapt/gradcheck_suite.hpp"
#include "protoadapt/harness.hpp"
#include "protoadapt/losses.hpp"
#include "protoadapt/meta_train.hpp"
#include "protoadapt/target_adapt.hpp"

namespace fs = std::filesystem;
using namespace protoadapt;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  bool has_seed_override = false;
  int workers_override = -1;
};

cfg::RunConfig load_config(const GlobalArgs& args) {
  cfg::RunConfig c = args.config_path.empty()
                         ? cfg::RunConfig{}
                         : cfg::parse_config(args.config_path);
  if (args.has_seed_override) c.seed = args.seed_override;
  if (!args.out_override.empty()) c.out_dir = args.out_override;
  if (args.workers_override >= 0) c.eval.workers = args.workers_override;
  cfg::validate(c);
  return c;
}

fs::path run_dir(const cfg::RunConfig& c) {
  return fs::path(c.out_dir) / cfg::config_hash(c);
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw IoError("failed writing: " + path.string());
}

fs::path prepare_run_dir(const cfg::RunConfig& c) {
  const fs::path dir = run_dir(c);
  fs::create_directories(dir);
  write_file(dir / "config_echo.txt", cfg::canonical_echo(c));
  std::cout << "config_hash " << cfg::config_hash(c) << "\n";
  std::cout << "out_dir " << dir.string() << "\n";
  return dir;
}

fs::path default_checkpoint_path(const cfg::RunConfig& c) {
  return run_dir(c) / "checkpoint.json";
}

model::Checkpoint load_and_check(const fs::path& path,
                                 const cfg::RunConfig& c) {
  if (!fs::exists(path)) {
    throw IoError("checkpoint not found: " + path.string() +
                  " (run meta-train first or pass --checkpoint)");
  }
  model::Checkpoint ckpt = model::load_checkpoint(path);
  model::check_compatible(ckpt, c.data.input_dim, c.model.embed_dim,
                          c.model.pcn_k_in);
  return ckpt;
}

int cmd_gen_bench(const cfg::RunConfig& c) {
  const fs::path dir = prepare_run_dir(c);
  const data::Benchmark bench = data::make_benchmark(c);
  std::vector<data::Episode> episodes;
  episodes.reserve(static_cast<std::size_t>(c.eval.n_tasks));
  for (int t = 0; t < c.eval.n_tasks; ++t) {
    episodes.push_back(data::sample_episode(
        bench.target, c.episode.n_way, c.episode.k_shot, c.episode.q_per_class,
        derive_seed(c.seed, "eval", static_cast<std::uint64_t>(t))));
  }
  data::write_episodes(dir / "episodes.jsonl", episodes, c.data.input_dim);
  std::cout << "wrote " << episodes.size() << " episodes to "
            << (dir / "episodes.jsonl").string() << "\n";
  return 0;
}

int cmd_meta_train(const cfg::RunConfig& c) {
  const fs::path dir = prepare_run_dir(c);
  const data::Benchmark bench = data::make_benchmark(c);
  const train::MetaTrainResult result = train::meta_train(c, bench.source);
  model::Checkpoint ckpt;
  ckpt.config_hash = cfg::config_hash(c);
  ckpt.encoder = result.theta;
  ckpt.pcn = result.phi;
  model::save_checkpoint(dir / "checkpoint.json", ckpt);
  write_file(dir / "train_curve.csv", train::curve_csv(result.curve));
  std::cout << "trained " << result.curve.size() << " episodes, checkpoint at "
            << (dir / "checkpoint.json").string() << "\n";
  return 0;
}

int cmd_adapt_eval(const cfg::RunConfig& c, const std::string& checkpoint,
                   const std::string& episodes_file) {
  const fs::path dir = prepare_run_dir(c);
  const fs::path ckpt_path =
      checkpoint.empty() ? default_checkpoint_path(c) : fs::path(checkpoint);
  const model::Checkpoint ckpt = load_and_check(ckpt_path, c);
  const data::Benchmark bench = data::make_benchmark(c);

  std::vector<data::Episode> episodes;
  if (!episodes_file.empty()) {
    episodes = data::read_episodes(episodes_file);
    for (const auto& ep : episodes) {
      if (ep.n_way != c.episode.n_way || ep.k_shot != c.episode.k_shot) {
        throw ConfigError("episodes file shape does not match config");
      }
    }
  }
  const bench::EvalOutput out =
      bench::evaluate(ckpt.encoder, ckpt.pcn, bench.target, c, episodes);
  write_file(dir / "metrics.csv", bench::metrics_csv(out));
  write_file(dir / "summary.json", bench::summary_json(out.metrics, "full"));
  if (c.eval.write_traces) {
    for (const bench::TaskRecord& r : out.tasks) {
      write_file(dir / "traces" / ("task_" + std::to_string(r.index) + ".csv"),
                 r.trace_csv);
    }
  }
  std::printf("mean accuracy %.4f (ci95 %.4f) over %d tasks\n",
              out.metrics.mean, out.metrics.ci95, out.metrics.n_tasks);
  return 0;
}

int cmd_ablate(const cfg::RunConfig& c, std::vector<std::string> ids) {
  const fs::path dir = prepare_run_dir(c);
  if (ids.empty()) ids = cfg::variant_ids();
  const auto outcomes = bench::run_ablation(c, ids);
  write_file(dir / "ablation.csv", bench::ablation_csv(outcomes));
  write_file(dir / "ablation.md", bench::ablation_markdown(outcomes));
  for (const auto& o : outcomes) {
    write_file(dir / ("summary_" + o.id + ".json"),
               bench::summary_json(o.metrics, o.id));
    std::printf("%-20s mean %.4f (ci95 %.4f)\n", o.id.c_str(), o.metrics.mean,
                o.metrics.ci95);
  }
  return 0;
}

int cmd_sweep(const cfg::RunConfig& c, const std::string& param,
              const std::string& grid_str) {
  const fs::path dir = prepare_run_dir(c);
  std::vector<double> grid;
  std::stringstream ss(grid_str);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      grid.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("sweep: bad grid value '" + item + "'");
    }
  }
  const auto points = bench::sweep(c, param, grid);
  write_file(dir / ("sweep_" + param + ".csv"), bench::sweep_csv(param, points));
  for (const auto& p : points) {
    std::printf("%s=%-8g mean %.4f (ci95 %.4f)\n", param.c_str(), p.value,
                p.metrics.mean, p.metrics.ci95);
  }
  return 0;
}

int cmd_gradcheck(const cfg::RunConfig& c, int n_episodes, double tolerance) {
  const auto checks = bench::gradcheck_losses(n_episodes, 1e-5, c.seed);
  bool ok = true;
  for (const auto& check : checks) {
    const bool pass = check.max_rel_err < tolerance;
    ok = ok && pass;
    std::printf("%-18s max rel err %.3e  %s\n", check.term.c_str(),
                check.max_rel_err, pass ? "ok" : "FAIL");
  }
  if (!ok) {
    std::cerr << "gradient check failed (tolerance " << tolerance << ")\n";
    return 3;
  }
  return 0;
}

int cmd_replay(const cfg::RunConfig& c, const std::string& checkpoint,
               std::uint64_t episode_seed, int task_index) {
  const fs::path dir = prepare_run_dir(c);
  const fs::path ckpt_path =
      checkpoint.empty() ? default_checkpoint_path(c) : fs::path(checkpoint);
  const model::Checkpoint ckpt = load_and_check(ckpt_path, c);
  const data::Benchmark bench = data::make_benchmark(c);
  const std::uint64_t seed =
      task_index >= 0
          ? derive_seed(c.seed, "eval", static_cast<std::uint64_t>(task_index))
          : episode_seed;
  const data::Episode episode =
      data::sample_episode(bench.target, c.episode.n_way, c.episode.k_shot,
                           c.episode.q_per_class, seed);
  const bench::TaskRecord record = bench::evaluate_task(
      ckpt.encoder, ckpt.pcn, episode, c,
      task_index >= 0 ? task_index : 0, seed);
  const fs::path trace_path =
      dir / "traces" / ("replay_" + std::to_string(seed) + ".csv");
  write_file(trace_path, record.trace_csv);
  std::printf("seed %llu accuracy %.4f trace %s\n",
              static_cast<unsigned long long>(seed), record.accuracy,
              trace_path.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Cross-domain few-shot classification lab: learned prototype "
      "calculation, episodic meta-training, and transductive self-training "
      "with smoothed pseudo-labels on a synthetic benchmark."};
  app.require_subcommand(1);

  GlobalArgs args;
  app.add_option("--config", args.config_path,
                 "Config file (key = value lines); defaults apply when "
                 "omitted");
  app.add_option("--out", args.out_override, "Output directory override");
  app.add_option("--seed", args.seed_override, "Root seed override")
      ->each([&](const std::string&) { args.has_seed_override = true; });
  app.add_option("--workers", args.workers_override,
                 "Evaluation worker threads (0 = logical processors)");

  auto* gen = app.add_subcommand("gen-bench",
                                 "Materialize the benchmark and write the "
                                 "evaluation episodes file");
  auto* mt = app.add_subcommand("meta-train",
                                "Episodic source-domain training; writes "
                                "checkpoint.json and train_curve.csv");
  auto* ae = app.add_subcommand("adapt-eval",
                                "Fine-tune and score every evaluation task; "
                                "writes metrics.csv, summary.json, traces/");
  std::string checkpoint;
  std::string episodes_file;
  ae->add_option("--checkpoint", checkpoint,
                 "Checkpoint path (default: <out>/<hash>/checkpoint.json)");
  ae->add_option("--episodes", episodes_file,
                 "Evaluate episodes from a file instead of sampling");

  auto* ab = app.add_subcommand("ablate",
                                "Run ablation variants over the paired task "
                                "list; writes ablation.csv/.md");
  std::vector<std::string> variant_list;
  ab->add_option("--variants", variant_list,
                 "Subset of variants (default: all)")
      ->delimiter(',');

  auto* sw = app.add_subcommand("sweep",
                                "Hyper-parameter sensitivity sweep over a "
                                "grid; writes sweep_<param>.csv");
  std::string sweep_param;
  std::string sweep_grid;
  sw->add_option("--param", sweep_param,
                 "One of: alpha0, epsilon, lambda_coh, lambda_dis")
      ->required();
  sw->add_option("--grid", sweep_grid, "Comma-separated values")->required();

  auto* gc = app.add_subcommand("gradcheck",
                                "Finite-difference check of every loss term; "
                                "exit 0 iff all pass");
  int gc_episodes = 20;
  double gc_tolerance = 1e-4;
  gc->add_option("--episodes", gc_episodes, "Number of seeded toy episodes");
  gc->add_option("--tolerance", gc_tolerance, "Max relative error");

  auto* rp = app.add_subcommand("replay",
                                "Re-run one evaluation episode from its "
                                "logged seed and write its trace");
  std::string rp_checkpoint;
  std::uint64_t rp_seed = 0;
  int rp_task = -1;
  rp->add_option("--checkpoint", rp_checkpoint, "Checkpoint path");
  auto* seed_opt =
      rp->add_option("--episode-seed", rp_seed, "Episode seed to replay");
  rp->add_option("--task", rp_task,
                 "Task index to replay (derives the seed)");
  (void)seed_opt;

  CLI11_PARSE(app, argc, argv);

  try {
    const cfg::RunConfig c = load_config(args);
    if (gen->parsed()) return cmd_gen_bench(c);
    if (mt->parsed()) return cmd_meta_train(c);
    if (ae->parsed()) return cmd_adapt_eval(c, checkpoint, episodes_file);
    if (ab->parsed()) return cmd_ablate(c, variant_list);
    if (sw->parsed()) return cmd_sweep(c, sweep_param, sweep_grid);
    if (gc->parsed()) return cmd_gradcheck(c, gc_episodes, gc_tolerance);
    if (rp->parsed()) {
      if (rp_task < 0 && seed_opt->count() == 0) {
        throw ConfigError("replay: pass --task or --episode-seed");
      }
      return cmd_replay(c, rp_checkpoint, rp_seed, rp_task);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
