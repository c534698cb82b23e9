#include "protoadapt/gradcheck_suite.hpp"

#include <cmath>

#include "protoadapt/losses.hpp"
#include "protoadapt/model.hpp"

namespace protoadapt::bench {

namespace {

// Toy sizes keep the coordinate-wise finite differencing cheap.
constexpr std::size_t kInputDim = 4;
constexpr std::size_t kHidden = 8;
constexpr std::size_t kEmbedDim = 4;
constexpr int kNWay = 3;
constexpr int kShot = 2;
constexpr int kQuery = 3;
constexpr double kEpsilonGate = 0.2;  // with N=3 every row clears it

struct ToyEpisode {
  std::vector<std::vector<double>> support_x;
  std::vector<int> support_y;
  std::vector<std::vector<double>> query_x;
  std::vector<int> query_y;
  std::vector<std::vector<double>> soft_targets;
};

ToyEpisode make_toy_episode(std::uint64_t seed) {
  Rng rng(seed);
  ToyEpisode ep;
  for (int c = 0; c < kNWay; ++c) {
    std::vector<double> mean(kInputDim);
    for (double& v : mean) v = 0.8 * rng.normal();
    for (int k = 0; k < kShot; ++k) {
      std::vector<double> x(kInputDim);
      for (std::size_t d = 0; d < kInputDim; ++d) {
        x[d] = mean[d] + 0.4 * rng.normal();
      }
      ep.support_x.push_back(std::move(x));
      ep.support_y.push_back(c);
    }
    for (int q = 0; q < kQuery; ++q) {
      std::vector<double> x(kInputDim);
      for (std::size_t d = 0; d < kInputDim; ++d) {
        x[d] = mean[d] + 0.4 * rng.normal();
      }
      ep.query_x.push_back(std::move(x));
      ep.query_y.push_back(c);
    }
  }
  for (std::size_t q = 0; q < ep.query_x.size(); ++q) {
    std::vector<double> row(kNWay);
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(rng.normal());
      z += v;
    }
    for (double& v : row) v /= z;
    ep.soft_targets.push_back(std::move(row));
  }
  return ep;
}

struct ParamLayout {
  std::vector<std::vector<double>> values;
  std::vector<ad::Shape> shapes;
};

ParamLayout layout_params(const model::EncoderParams& theta,
                          const model::PcnParams& phi) {
  ParamLayout layout;
  for (const auto& l : theta.layers) {
    layout.values.push_back(l.weight);
    layout.shapes.push_back({l.in, l.out});
    layout.values.push_back(l.bias);
    layout.shapes.push_back({l.out});
  }
  layout.values.push_back(phi.weight);
  layout.shapes.push_back({phi.k_in * phi.d, phi.d});
  layout.values.push_back(phi.bias);
  layout.shapes.push_back({phi.d});
  return layout;
}

// Embeddings and prototypes of the toy episode at the fixed parameters;
// these become the leaf inputs of the bare per-term checks.
struct EpisodePoints {
  std::vector<std::vector<double>> support_emb;
  std::vector<std::vector<double>> query_emb;
  std::vector<std::vector<double>> prototypes;
};

EpisodePoints episode_points(const model::EncoderParams& theta,
                             const model::PcnParams& phi,
                             const ToyEpisode& ep) {
  ad::Tape tape;
  auto enc = model::bind_encoder(tape, theta, false);
  auto pcn = model::bind_pcn(tape, phi, false, true);
  std::vector<ad::Tensor> support_emb, query_emb;
  for (const auto& x : ep.support_x) {
    support_emb.push_back(model::encoder_forward(tape, enc, x));
  }
  for (const auto& x : ep.query_x) {
    query_emb.push_back(model::encoder_forward(tape, enc, x));
  }
  const auto protos = proto::pcn_prototypes(tape, support_emb, ep.support_y,
                                            kNWay, pcn, kShot);
  EpisodePoints pts;
  for (const auto& t : support_emb) {
    pts.support_emb.emplace_back(t.value().begin(), t.value().end());
  }
  for (const auto& t : query_emb) {
    pts.query_emb.emplace_back(t.value().begin(), t.value().end());
  }
  for (const auto& t : protos) {
    pts.prototypes.emplace_back(t.value().begin(), t.value().end());
  }
  return pts;
}

// Rebuilds the episode graph from raw parameter leaves so grad_check can
// perturb every network coordinate.
loss::EpisodeGraph graph_from_leaves(ad::Tape& tape,
                                     std::span<const ad::Tensor> params,
                                     const ToyEpisode& ep) {
  loss::EpisodeGraph g;
  const std::size_t n_layers = (params.size() - 2) / 2;
  for (std::size_t i = 0; i < n_layers; ++i) {
    g.encoder.layers.emplace_back(params[2 * i], params[2 * i + 1]);
  }
  g.pcn = model::PcnNodes{params[params.size() - 2], params[params.size() - 1],
                          true};
  g.support_labels = ep.support_y;
  for (const auto& x : ep.support_x) {
    g.support_emb.push_back(model::encoder_forward(tape, g.encoder, x));
  }
  for (const auto& x : ep.query_x) {
    g.query_emb.push_back(model::encoder_forward(tape, g.encoder, x));
  }
  g.prototypes = proto::pcn_prototypes(tape, g.support_emb, g.support_labels,
                                       kNWay, *g.pcn, kShot);
  return g;
}

std::vector<ad::Tensor> query_prob_nodes(ad::Tape& tape,
                                         const loss::EpisodeGraph& g) {
  std::vector<ad::Tensor> probs;
  probs.reserve(g.query_emb.size());
  for (const ad::Tensor& e : g.query_emb) {
    probs.push_back(loss::class_probs(tape, e, g.prototypes));
  }
  return probs;
}

// Central differences cannot certify every episode: they are blind across
// the ReLU kink, they drown in quantization noise on structurally
// zero-gradient coordinates (a coordinate clamped to zero in every
// prototype makes the softmax exactly invariant to it), and the
// discriminative reciprocal is too curved near prototype collapse. Such
// episodes are skipped deterministically.
bool episode_ill_conditioned(const model::EncoderParams& theta,
                             const model::PcnParams& phi, const ToyEpisode& ep,
                             double margin) {
  std::vector<std::vector<double>> embeddings;
  auto forward = [&](const std::vector<double>& x) -> bool {
    std::vector<double> h = x;
    for (std::size_t li = 0; li < theta.layers.size(); ++li) {
      const auto& l = theta.layers[li];
      std::vector<double> next(l.out, 0.0);
      for (std::size_t j = 0; j < l.out; ++j) {
        double acc = l.bias[j];
        for (std::size_t i = 0; i < l.in; ++i) {
          acc += h[i] * l.weight[i * l.out + j];
        }
        next[j] = acc;
      }
      const bool last = li + 1 == theta.layers.size();
      if (!last) {
        for (double& v : next) {
          if (std::fabs(v) < margin) return true;
          v = v > 0.0 ? v : 0.0;
        }
      }
      h = std::move(next);
    }
    embeddings.push_back(h);
    return false;
  };
  for (const auto& x : ep.support_x) {
    if (forward(x)) return true;
  }
  for (const auto& x : ep.query_x) {
    if (forward(x)) return true;
  }
  std::vector<std::vector<double>> prototypes;
  for (int c = 0; c < kNWay; ++c) {
    std::vector<double> concat;
    for (std::size_t s = 0; s < ep.support_y.size(); ++s) {
      if (ep.support_y[s] == c) {
        concat.insert(concat.end(), embeddings[s].begin(),
                      embeddings[s].end());
      }
    }
    std::vector<double> proto(phi.d);
    for (std::size_t j = 0; j < phi.d; ++j) {
      double acc = phi.bias[j];
      for (std::size_t i = 0; i < concat.size(); ++i) {
        acc += concat[i] * phi.weight[i * phi.d + j];
      }
      if (std::fabs(acc) < margin) return true;
      proto[j] = acc > 0.0 ? acc : 0.0;
    }
    prototypes.push_back(std::move(proto));
  }
  for (std::size_t d = 0; d < phi.d; ++d) {
    bool all_clamped = true;
    for (const auto& p : prototypes) all_clamped = all_clamped && p[d] == 0.0;
    if (all_clamped) return true;
  }
  double pair_sum = 0.0;
  for (std::size_t i = 0; i < prototypes.size(); ++i) {
    for (std::size_t j = i + 1; j < prototypes.size(); ++j) {
      for (std::size_t d = 0; d < phi.d; ++d) {
        const double diff = prototypes[i][d] - prototypes[j][d];
        pair_sum += diff * diff;
      }
    }
  }
  if (pair_sum < 0.25) return true;
  // Near-saturated class probabilities leave gradients below what central
  // differences can resolve.
  for (const auto& e : embeddings) {
    std::vector<double> neg(prototypes.size());
    double hi = -1e300;
    for (std::size_t c = 0; c < prototypes.size(); ++c) {
      double dist = 0.0;
      for (std::size_t d = 0; d < phi.d; ++d) {
        const double diff = e[d] - prototypes[c][d];
        dist += diff * diff;
      }
      neg[c] = -dist;
      hi = std::max(hi, neg[c]);
    }
    double z = 0.0;
    for (double& v : neg) {
      v = std::exp(v - hi);
      z += v;
    }
    for (double v : neg) {
      if (v / z < 1e-3) return true;
    }
  }
  return false;
}

ParamLayout leaf_layout(const EpisodePoints& pts, bool with_support,
                        bool with_query) {
  ParamLayout layout;
  for (const auto& p : pts.prototypes) {
    layout.values.push_back(p);
    layout.shapes.push_back({p.size()});
  }
  if (with_support) {
    for (const auto& e : pts.support_emb) {
      layout.values.push_back(e);
      layout.shapes.push_back({e.size()});
    }
  }
  if (with_query) {
    for (const auto& e : pts.query_emb) {
      layout.values.push_back(e);
      layout.shapes.push_back({e.size()});
    }
  }
  return layout;
}

}  // namespace

std::vector<LossTermCheck> gradcheck_losses(int n_episodes, double step,
                                            std::uint64_t seed) {
  const double lambda_dis = 0.1;
  const double lambda_coh = 1e-3;
  std::vector<LossTermCheck> checks = {
      {"ce_query", 0},      {"ce_support", 0},     {"l_dis", 0},
      {"l_coh_query", 0},   {"l_coh_support", 0},  {"ce_transductive", 0},
      {"joint_train", 0},   {"joint_finetune", 0},
  };

  int produced = 0;
  std::uint64_t index = 0;
  while (produced < n_episodes) {
    const std::uint64_t ep_seed = derive_seed(seed, "gradcheck", index++);
    const ToyEpisode ep = make_toy_episode(ep_seed);
    const auto theta = model::make_encoder(
        kInputDim, std::vector<std::size_t>{kHidden}, kEmbedDim,
        derive_seed(ep_seed, "theta", 0));
    const auto phi =
        model::make_pcn(kShot, kEmbedDim, derive_seed(ep_seed, "phi", 0));
    if (episode_ill_conditioned(theta, phi, ep, 100.0 * step)) continue;
    ++produced;

    const EpisodePoints pts = episode_points(theta, phi, ep);
    const std::size_t n_proto = pts.prototypes.size();

    auto check = [&](std::size_t slot, const ParamLayout& layout,
                     const ad::LossBuilder& build) {
      const auto r = ad::grad_check(build, layout.values, layout.shapes, step);
      checks[slot].max_rel_err =
          std::max(checks[slot].max_rel_err, r.max_rel_err);
    };

    // Bare terms against their immediate inputs: prototypes first, then the
    // relevant embeddings.
    const ParamLayout q_layout = leaf_layout(pts, false, true);
    const ParamLayout s_layout = leaf_layout(pts, true, false);
    const ParamLayout p_layout = leaf_layout(pts, false, false);

    auto probs_of = [&](ad::Tape& t, std::span<const ad::Tensor> p,
                        std::size_t count) {
      std::vector<ad::Tensor> probs;
      const std::span<const ad::Tensor> protos = p.subspan(0, n_proto);
      for (std::size_t i = 0; i < count; ++i) {
        probs.push_back(loss::class_probs(t, p[n_proto + i], protos));
      }
      return probs;
    };

    check(0, q_layout, [&](ad::Tape& t, std::span<const ad::Tensor> p) {
      auto probs = probs_of(t, p, pts.query_emb.size());
      return loss::ce_labeled(t, probs, ep.query_y);
    });
    check(1, s_layout, [&](ad::Tape& t, std::span<const ad::Tensor> p) {
      auto probs = probs_of(t, p, pts.support_emb.size());
      return loss::ce_labeled(t, probs, ep.support_y);
    });
    check(2, p_layout, [&](ad::Tape& t, std::span<const ad::Tensor> p) {
      return loss::discriminative_loss(t, p.subspan(0, n_proto));
    });
    check(3, q_layout, [&](ad::Tape& t, std::span<const ad::Tensor> p) {
      return loss::cohesive_loss(t, p.subspan(0, n_proto),
                                 p.subspan(n_proto), ep.query_y);
    });
    check(4, s_layout, [&](ad::Tape& t, std::span<const ad::Tensor> p) {
      return loss::cohesive_loss(t, p.subspan(0, n_proto),
                                 p.subspan(n_proto), ep.support_y);
    });
    check(5, q_layout, [&](ad::Tape& t, std::span<const ad::Tensor> p) {
      auto probs = probs_of(t, p, pts.query_emb.size());
      const auto term =
          loss::transductive_ce(t, probs, ep.soft_targets, kEpsilonGate);
      return *term.value;
    });

    // Composites through the full encoder + prototype-network chain.
    const ParamLayout net = layout_params(theta, phi);
    check(6, net, [&](ad::Tape& t, std::span<const ad::Tensor> p) {
      auto g = graph_from_leaves(t, p, ep);
      return loss::meta_training_loss(t, g, ep.query_y, lambda_dis, lambda_coh)
          .total_node;
    });
    check(7, net, [&](ad::Tape& t, std::span<const ad::Tensor> p) {
      auto g = graph_from_leaves(t, p, ep);
      auto probs = query_prob_nodes(t, g);
      return loss::finetune_loss(t, g, probs, ep.soft_targets, lambda_dis,
                                 lambda_coh, kEpsilonGate, true)
          .total_node;
    });
  }
  return checks;
}

}  // namespace protoadapt::bench
