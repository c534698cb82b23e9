#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "protoadapt/model.hpp"
#include "protoadapt/tensor.hpp"

namespace protoadapt::proto {

enum class Mode { kMean, kPcn };
Mode mode_from_string(std::string_view s);

/// Per-class average of the support embeddings; permutation invariant.
std::vector<ad::Tensor> mean_prototypes(ad::Tape& tape,
                                        std::span<const ad::Tensor> embeddings,
                                        std::span<const int> labels, int n_way);

/// Per class: concatenate exactly k_in embeddings in ascending within-class
/// sample order and run them through the prototype network. Order sensitive
/// by construction. Classes whose shot count differs from k_in are an error;
/// reduce them with cluster_reduce first.
std::vector<ad::Tensor> pcn_prototypes(ad::Tape& tape,
                                       std::span<const ad::Tensor> embeddings,
                                       std::span<const int> labels, int n_way,
                                       const model::PcnNodes& pcn,
                                       std::size_t k_in);

struct KmeansOptions {
  int max_iters = 50;
  int restarts = 8;
};

struct KmeansResult {
  std::vector<std::vector<double>> centroids;  // cluster-index order
  std::vector<int> assignment;                 // per input point
  double sse = 0.0;
};

/// Lloyd with k-means++ seeding. Deterministic in (points order, seed).
/// Restarts take the best sum of squared errors. Ties in assignment break
/// toward the lowest centroid index; an emptied cluster is reseeded at the
/// point farthest from its assigned centroid.
KmeansResult kmeans(std::span<const std::vector<double>> points, int k,
                    std::uint64_t seed, KmeansOptions options = {});

/// K' centroids of the given class embeddings, sorted lexicographically by
/// coordinates so the downstream concat is deterministic. Points are sorted
/// internally first, so the result depends only on the multiset of inputs.
/// Returns fewer than k_prime centroids when the points have fewer distinct
/// values.
std::vector<std::vector<double>> cluster_reduce(
    std::span<const std::vector<double>> points, int k_prime,
    std::uint64_t seed, KmeansOptions options = {});

/// Differentiable twin of cluster_reduce: cluster assignments come from the
/// embedding values, and each centroid is rebuilt on the tape as the mean of
/// its member tensors, so gradients flow into the members.
std::vector<ad::Tensor> cluster_reduce_graph(
    ad::Tape& tape, std::span<const ad::Tensor> class_embeddings, int k_prime,
    std::uint64_t seed, KmeansOptions options = {});

/// Prototype construction used by every training phase: mean prototypes, PCN
/// prototypes, or cluster+PCN when the per-class shot count exceeds k_in.
struct PrototypeSpec {
  Mode mode = Mode::kPcn;
  std::size_t k_in = 5;
  std::uint64_t kmeans_seed = 0;
  KmeansOptions kmeans;
};
std::vector<ad::Tensor> build_prototypes(ad::Tape& tape,
                                         std::span<const ad::Tensor> embeddings,
                                         std::span<const int> labels, int n_way,
                                         const model::PcnNodes* pcn,
                                         const PrototypeSpec& spec);

}  // namespace protoadapt::proto
