#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protoadapt/common.hpp"

namespace protoadapt::cfg {

/// Every knob of a run. Parsed from flat `key = value` text (dotted keys for
/// sections); unknown keys and constraint violations are hard errors. All
/// defaults are materialized into the canonical echo, and the config hash is
/// computed over that echo, so it is independent of key order in the input.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "out";

  struct Data {
    std::size_t input_dim = 16;
    int source_classes = 40;
    int target_classes = 20;
    double mean_spread = 2.0;
    double class_scale_min = 0.35;
    double class_scale_max = 0.7;
    bool target_rotation = true;
    double target_scale_min = 0.5;
    double target_scale_max = 2.0;
    double target_offset_spread = 0.5;
    bool target_tanh = false;
  } data;

  struct Episode {
    int n_way = 5;
    int k_shot = 5;
    int q_per_class = 15;
  } episode;

  struct Model {
    std::vector<std::size_t> hidden_dims{64, 64};
    std::size_t embed_dim = 16;
    std::size_t pcn_k_in = 5;
    bool pcn_bias = true;
  } model;

  struct Proto {
    std::string mode = "pcn";  // pcn | mean
    int kmeans_restarts = 8;
  } proto;

  struct Meta {
    int max_iters = 2000;
    int max_initers = 5;
    double inner_lr = 0.01;
    double outer_lr = 1e-6;
    std::string outer_optimizer = "adam";
    double outer_weight_decay = 0.01;
    bool reset_theta_per_episode = false;
    bool outer_updates_theta = false;
    int warmup_iters = 0;
    double warmup_lr = 1e-3;
    int warmup_batch = 32;
  } meta;

  struct Adapt {
    int max_iters = 100;
    double lr = 0.01;
    std::string optimizer = "sgd";
    double weight_decay = 0.0;
    double alpha0 = 0.5;
    double gamma = 0.99;
    double epsilon = 0.4;
    bool use_wma = true;
    bool use_support_ce = true;
    bool alpha0_first = false;
    int cluster_kprime = 5;
  } adapt;

  struct Loss {
    double lambda_dis = 0.1;
    double lambda_coh = 0.001;
  } loss;

  struct Eval {
    int n_tasks = 200;
    int workers = 0;  // 0 = number of logical processors
    bool write_traces = true;
  } eval;
};

RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_text(std::string_view text, std::string_view origin);

/// Constraint checks; throws ConfigError naming the key and constraint.
void validate(const RunConfig& c);

/// Every key in sorted order, one `key = value` line each.
std::string canonical_echo(const RunConfig& c);
/// 16 hex chars over the canonical echo.
std::string config_hash(const RunConfig& c);
/// Hash over the keys that determine the meta-training stage only, so runs
/// that differ in adaptation/eval settings can share a checkpoint.
std::string meta_stage_hash(const RunConfig& c);

/// Known ablation toggles; see variant_ids().
const std::vector<std::string>& variant_ids();
RunConfig apply_variant(RunConfig c, std::string_view variant_id);

/// True when the shot count requires cluster reduction before the PCN.
bool clustering_active(const RunConfig& c);

}  // namespace protoadapt::cfg
