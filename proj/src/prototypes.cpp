#include "protoadapt/prototypes.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>

namespace protoadapt::proto {

Mode mode_from_string(std::string_view s) {
  if (s == "mean") return Mode::kMean;
  if (s == "pcn") return Mode::kPcn;
  throw ConfigError("unknown prototype mode '" + std::string(s) + "'");
}

namespace {

std::vector<std::vector<std::size_t>> group_by_class(
    std::span<const int> labels, int n_way) {
  std::vector<std::vector<std::size_t>> groups(
      static_cast<std::size_t>(n_way));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= n_way) {
      throw DimensionError("prototypes: label " + std::to_string(c) +
                           " out of range for n_way " + std::to_string(n_way));
    }
    groups[static_cast<std::size_t>(c)].push_back(i);
  }
  for (int c = 0; c < n_way; ++c) {
    if (groups[static_cast<std::size_t>(c)].empty()) {
      throw DimensionError("prototypes: class " + std::to_string(c) +
                           " has no embeddings");
    }
  }
  return groups;
}

ad::Tensor mean_of(ad::Tape& tape, std::span<const ad::Tensor> members) {
  ad::Tensor acc = members[0];
  for (std::size_t i = 1; i < members.size(); ++i) {
    acc = tape.add(acc, members[i]);
  }
  return tape.scale(acc, 1.0 / static_cast<double>(members.size()));
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

std::vector<ad::Tensor> mean_prototypes(ad::Tape& tape,
                                        std::span<const ad::Tensor> embeddings,
                                        std::span<const int> labels,
                                        int n_way) {
  const auto groups = group_by_class(labels, n_way);
  std::vector<ad::Tensor> protos;
  protos.reserve(groups.size());
  for (const auto& g : groups) {
    std::vector<ad::Tensor> members;
    members.reserve(g.size());
    for (std::size_t i : g) members.push_back(embeddings[i]);
    protos.push_back(mean_of(tape, members));
  }
  return protos;
}

std::vector<ad::Tensor> pcn_prototypes(ad::Tape& tape,
                                       std::span<const ad::Tensor> embeddings,
                                       std::span<const int> labels, int n_way,
                                       const model::PcnNodes& pcn,
                                       std::size_t k_in) {
  const auto groups = group_by_class(labels, n_way);
  std::vector<ad::Tensor> protos;
  protos.reserve(groups.size());
  for (int c = 0; c < n_way; ++c) {
    const auto& g = groups[static_cast<std::size_t>(c)];
    if (g.size() != k_in) {
      throw DimensionError(
          "pcn_prototypes: class " + std::to_string(c) + " has " +
          std::to_string(g.size()) + " embeddings but the prototype network "
          "expects " + std::to_string(k_in) +
          "; enable clustering to reduce the shot count");
    }
    std::vector<ad::Tensor> parts;
    parts.reserve(g.size());
    for (std::size_t i : g) parts.push_back(embeddings[i]);
    protos.push_back(pcn_forward(tape, pcn, tape.concat(parts)));
  }
  return protos;
}

// -------------------------------------------------------------- k-means --

namespace {

struct LloydRun {
  std::vector<std::vector<double>> centroids;
  std::vector<int> assignment;
  double sse = 0.0;
};

int nearest_centroid(std::span<const double> p,
                     const std::vector<std::vector<double>>& centroids) {
  int best = 0;
  double best_d = sq_dist(p, centroids[0]);
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double d = sq_dist(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double total_sse(std::span<const std::vector<double>> points,
                 const std::vector<std::vector<double>>& centroids,
                 const std::vector<int>& assignment) {
  double sse = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    sse += sq_dist(points[i], centroids[static_cast<std::size_t>(assignment[i])]);
  }
  return sse;
}

std::vector<std::vector<double>> kmeanspp_init(
    std::span<const std::vector<double>> points, int k, Rng& rng) {
  std::vector<std::vector<double>> centroids;
  centroids.reserve(static_cast<std::size_t>(k));
  centroids.push_back(points[rng.index(points.size())]);
  std::vector<double> d2(points.size());
  while (centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = sq_dist(points[i], centroids[0]);
      for (std::size_t c = 1; c < centroids.size(); ++c) {
        d2[i] = std::min(d2[i], sq_dist(points[i], centroids[c]));
      }
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (acc > r) {
          pick = i;
          break;
        }
      }
    } else {
      // All remaining mass at distance zero (duplicates); lowest index wins.
      pick = rng.index(points.size());
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

LloydRun lloyd(std::span<const std::vector<double>> points, int k,
               std::uint64_t seed, const KmeansOptions& options) {
  Rng rng(seed);
  LloydRun run;
  run.centroids = kmeanspp_init(points, k, rng);
  run.assignment.assign(points.size(), -1);
  const std::size_t dim = points[0].size();

  double prev_sse = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < options.max_iters; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int c = nearest_centroid(points[i], run.centroids);
      if (c != run.assignment[i]) {
        run.assignment[i] = c;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    std::vector<std::vector<double>> sums(
        static_cast<std::size_t>(k), std::vector<double>(dim, 0.0));
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto c = static_cast<std::size_t>(run.assignment[i]);
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
    }
    bool repaired = false;
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (counts[c] > 0) {
        for (std::size_t d = 0; d < dim; ++d) {
          run.centroids[c][d] = sums[c][d] / counts[c];
        }
      } else {
        // Reseed an emptied cluster at the point farthest from its centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          const double d = sq_dist(
              points[i],
              run.centroids[static_cast<std::size_t>(run.assignment[i])]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        run.centroids[c] = points[far];
        repaired = true;
      }
    }
    const double sse = total_sse(points, run.centroids, run.assignment);
    if (!repaired) {
      // Lloyd updates never increase the objective.
      assert(sse <= prev_sse * (1.0 + 1e-9) + 1e-12);
    }
    prev_sse = sse;
    (void)prev_sse;
  }
  // Final assignment against the final centroids.
  for (std::size_t i = 0; i < points.size(); ++i) {
    run.assignment[i] = nearest_centroid(points[i], run.centroids);
  }
  run.sse = total_sse(points, run.centroids, run.assignment);
  return run;
}

}  // namespace

KmeansResult kmeans(std::span<const std::vector<double>> points, int k,
                    std::uint64_t seed, KmeansOptions options) {
  if (points.empty() || k < 1) {
    throw DimensionError("kmeans: need at least one point and k >= 1");
  }
  if (static_cast<std::size_t>(k) > points.size()) {
    throw DimensionError("kmeans: k " + std::to_string(k) +
                         " exceeds point count " +
                         std::to_string(points.size()));
  }
  LloydRun best;
  best.sse = std::numeric_limits<double>::infinity();
  for (int r = 0; r < options.restarts; ++r) {
    LloydRun run = lloyd(points, k,
                         derive_seed(seed, "kmeans-restart",
                                     static_cast<std::uint64_t>(r)),
                         options);
    if (run.sse < best.sse) best = std::move(run);
  }
  return KmeansResult{std::move(best.centroids), std::move(best.assignment),
                      best.sse};
}

namespace {

std::vector<std::size_t> lexicographic_order(
    std::span<const std::vector<double>> vecs) {
  std::vector<std::size_t> order(vecs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return std::lexicographical_compare(
                         vecs[a].begin(), vecs[a].end(), vecs[b].begin(),
                         vecs[b].end());
                   });
  return order;
}

std::size_t distinct_count(std::span<const std::vector<double>> points) {
  std::vector<std::vector<double>> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end());
  return static_cast<std::size_t>(
      std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

}  // namespace

std::vector<std::vector<double>> cluster_reduce(
    std::span<const std::vector<double>> points, int k_prime,
    std::uint64_t seed, KmeansOptions options) {
  if (k_prime < 1 || points.size() < static_cast<std::size_t>(k_prime)) {
    throw DimensionError("cluster_reduce: need K >= K' >= 1, got K=" +
                         std::to_string(points.size()) +
                         ", K'=" + std::to_string(k_prime));
  }
  // Sorting first makes the result a function of the multiset of points.
  std::vector<std::vector<double>> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end());
  const int k_eff = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(k_prime),
                            distinct_count(points)));
  KmeansResult result = kmeans(sorted, k_eff, seed, options);
  std::sort(result.centroids.begin(), result.centroids.end());
  return result.centroids;
}

std::vector<ad::Tensor> cluster_reduce_graph(
    ad::Tape& tape, std::span<const ad::Tensor> class_embeddings, int k_prime,
    std::uint64_t seed, KmeansOptions options) {
  if (k_prime < 1 ||
      class_embeddings.size() < static_cast<std::size_t>(k_prime)) {
    throw DimensionError("cluster_reduce: need K >= K' >= 1, got K=" +
                         std::to_string(class_embeddings.size()) +
                         ", K'=" + std::to_string(k_prime));
  }
  std::vector<std::vector<double>> values;
  values.reserve(class_embeddings.size());
  for (const ad::Tensor& t : class_embeddings) {
    values.emplace_back(t.value().begin(), t.value().end());
  }
  const auto order = lexicographic_order(values);
  std::vector<std::vector<double>> sorted;
  sorted.reserve(order.size());
  for (std::size_t i : order) sorted.push_back(values[i]);

  const int k_eff = static_cast<int>(std::min<std::size_t>(
      static_cast<std::size_t>(k_prime), distinct_count(values)));
  const KmeansResult result = kmeans(sorted, k_eff, seed, options);

  // Rebuild each centroid as a differentiable mean over its members, summing
  // in sorted-point order so the result is order independent.
  std::vector<std::vector<ad::Tensor>> members(
      static_cast<std::size_t>(k_eff));
  for (std::size_t s = 0; s < order.size(); ++s) {
    members[static_cast<std::size_t>(result.assignment[s])].push_back(
        class_embeddings[order[s]]);
  }
  std::vector<ad::Tensor> centroids;
  std::vector<std::vector<double>> centroid_values;
  centroids.reserve(members.size());
  for (auto& m : members) {
    // Every cluster is non-empty after the final reassignment in kmeans.
    ad::Tensor c = mean_of(tape, m);
    centroid_values.emplace_back(c.value().begin(), c.value().end());
    centroids.push_back(c);
  }
  const auto centroid_order = lexicographic_order(centroid_values);
  std::vector<ad::Tensor> out;
  out.reserve(centroids.size());
  for (std::size_t i : centroid_order) out.push_back(centroids[i]);
  return out;
}

std::vector<ad::Tensor> build_prototypes(ad::Tape& tape,
                                         std::span<const ad::Tensor> embeddings,
                                         std::span<const int> labels,
                                         int n_way,
                                         const model::PcnNodes* pcn,
                                         const PrototypeSpec& spec) {
  if (spec.mode == Mode::kMean) {
    return mean_prototypes(tape, embeddings, labels, n_way);
  }
  if (pcn == nullptr) {
    throw DimensionError("build_prototypes: pcn mode without pcn nodes");
  }
  const auto groups = group_by_class(labels, n_way);
  bool needs_cluster = false;
  for (const auto& g : groups) {
    if (g.size() != spec.k_in) needs_cluster = true;
  }
  if (!needs_cluster) {
    return pcn_prototypes(tape, embeddings, labels, n_way, *pcn, spec.k_in);
  }
  std::vector<ad::Tensor> protos;
  protos.reserve(groups.size());
  for (int c = 0; c < n_way; ++c) {
    const auto& g = groups[static_cast<std::size_t>(c)];
    std::vector<ad::Tensor> members;
    members.reserve(g.size());
    for (std::size_t i : g) members.push_back(embeddings[i]);
    const auto centroids = cluster_reduce_graph(
        tape, members, static_cast<int>(spec.k_in),
        derive_seed(spec.kmeans_seed, "class-cluster",
                    static_cast<std::uint64_t>(c)),
        spec.kmeans);
    if (centroids.size() != spec.k_in) {
      throw DimensionError(
          "build_prototypes: class " + std::to_string(c) + " reduced to " +
          std::to_string(centroids.size()) + " distinct centroids but the "
          "prototype network expects " + std::to_string(spec.k_in));
    }
    protos.push_back(pcn_forward(tape, *pcn, tape.concat(centroids)));
  }
  return protos;
}

}  // namespace protoadapt::proto
