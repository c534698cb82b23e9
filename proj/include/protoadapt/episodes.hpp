#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "protoadapt/common.hpp"
#include "protoadapt/config.hpp"

namespace protoadapt::data {

/// Affine map plus an optional fixed nonlinearity; the domain-shift knob.
/// An empty matrix means identity.
struct AffineTransform {
  std::vector<double> matrix;  // [dim x dim], row-major; empty = identity
  std::vector<double> offset;  // [dim]; empty = zero
  bool tanh_nonlinearity = false;

  std::vector<double> apply(std::span<const double> x) const;
};

struct DomainSpec {
  std::string name;
  std::size_t input_dim = 0;
  std::vector<int> class_ids;
  std::vector<std::vector<double>> class_means;  // one per class
  std::vector<double> class_scales;              // per-class noise scale
  AffineTransform transform;
  std::uint64_t seed = 0;
};

/// Materialized deterministic sampler. Instances of class c are
/// transform(mean_c + scale_c * z) with z standard normal from the caller's
/// stream. Immutable after construction; safe to sample concurrently with
/// per-episode streams.
class Domain {
 public:
  explicit Domain(DomainSpec spec);

  std::size_t class_count() const { return spec_.class_ids.size(); }
  const DomainSpec& spec() const { return spec_; }

  std::vector<double> sample_instance(std::size_t class_index, Rng& rng) const;

 private:
  DomainSpec spec_;
};

struct LabeledVec {
  std::vector<double> x;
  int label = 0;  // episode class index in [0, n_way)
};

/// One N-way K-shot task. Support and query are grouped by class, K (resp.
/// q_per_class) consecutive entries per class.
struct Episode {
  int n_way = 0;
  int k_shot = 0;
  int q_per_class = 0;
  std::vector<LabeledVec> support;
  std::vector<LabeledVec> query;
  std::vector<int> class_map;  // episode index -> global class id

  void validate(std::size_t input_dim) const;
};

/// Fully determined by (domain seed, episode_seed): classes drawn without
/// replacement, then K support + Q query instances per class from one stream.
Episode sample_episode(const Domain& domain, int n_way, int k_shot,
                       int q_per_class, std::uint64_t episode_seed);

/// JSON-lines file: one header object, then one episode object per line.
void write_episodes(const std::filesystem::path& path,
                    std::span<const Episode> episodes, std::size_t input_dim);
std::vector<Episode> read_episodes(const std::filesystem::path& path);

/// Source/target pair with disjoint class ids and a target-side affine
/// shift, all derived from the run seed.
struct Benchmark {
  Domain source;
  Domain target;
};
Benchmark make_benchmark(const cfg::RunConfig& c);

}  // namespace protoadapt::data
