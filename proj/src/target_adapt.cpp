#include "protoadapt/target_adapt.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "protoadapt/optim.hpp"

namespace protoadapt::adapt {

EpisodeView strip_labels(const data::Episode& episode) {
  EpisodeView view;
  view.n_way = episode.n_way;
  view.k_shot = episode.k_shot;
  view.support = episode.support;
  view.query_inputs.reserve(episode.query.size());
  for (const auto& q : episode.query) view.query_inputs.push_back(q.x);
  return view;
}

double anneal_alpha(double alpha_prev, double gamma) {
  return gamma * alpha_prev;
}

void wma_update(std::vector<double>& h_tilde, std::span<const double> h,
                double alpha) {
  if (h_tilde.size() != h.size()) {
    throw DimensionError("wma_update: length mismatch, " +
                         std::to_string(h_tilde.size()) + " vs " +
                         std::to_string(h.size()));
  }
  for (std::size_t i = 0; i < h.size(); ++i) {
    h_tilde[i] = alpha * h[i] + (1.0 - alpha) * h_tilde[i];
  }
}

std::vector<double> pseudo_label_row(std::span<const double> h_tilde) {
  std::vector<double> p(h_tilde.size());
  double hi = -h_tilde[0];
  for (std::size_t i = 1; i < h_tilde.size(); ++i) {
    hi = std::max(hi, -h_tilde[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < h_tilde.size(); ++i) {
    p[i] = std::exp(-h_tilde[i] - hi);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

namespace {

int argmin_index(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

loss::GraphOptions graph_options(const cfg::RunConfig& c,
                                 std::uint64_t episode_seed) {
  loss::GraphOptions o;
  o.train_encoder = true;
  o.train_pcn = false;
  o.pcn_bias = c.model.pcn_bias;
  o.prototypes.mode = proto::mode_from_string(c.proto.mode);
  o.prototypes.k_in = c.model.pcn_k_in;
  // One clustering seed per episode: assignments may still move across
  // iterations because the embeddings move.
  o.prototypes.kmeans_seed = derive_seed(episode_seed, "adapt-kmeans", 0);
  o.prototypes.kmeans.restarts = c.proto.kmeans_restarts;
  return o;
}

}  // namespace

AdaptResult finetune_episode(model::EncoderParams theta,
                             const model::PcnParams& phi,
                             const EpisodeView& view, const cfg::RunConfig& c,
                             std::uint64_t episode_seed,
                             const AdaptObserver& observer) {
  const int n_way = view.n_way;
  const std::size_t n_query = view.query_inputs.size();
  std::vector<std::vector<double>> support_x;
  std::vector<int> support_y;
  support_x.reserve(view.support.size());
  for (const auto& s : view.support) {
    support_x.push_back(s.x);
    support_y.push_back(s.label);
  }

  const std::uint64_t phi_sum = model::params_checksum(phi);
  AdaptResult result;
  result.predictions.assign(n_query, 0);

  if (c.adapt.max_iters == 0) {
    // Nothing to smooth yet; classify by distance to the initial prototypes.
    ad::Tape tape;
    auto options = graph_options(c, episode_seed);
    options.train_encoder = false;
    loss::EpisodeGraph g = loss::build_graph(
        tape, support_x, support_y, view.query_inputs, n_way, theta,
        c.proto.mode == "pcn" ? &phi : nullptr, options);
    for (std::size_t q = 0; q < n_query; ++q) {
      const auto dists =
          loss::distance_nodes(tape, g.query_emb[q], g.prototypes);
      std::vector<double> h(dists.size());
      for (std::size_t j = 0; j < dists.size(); ++j) h[j] = dists[j].scalar();
      result.predictions[q] = argmin_index(h);
    }
    result.theta = std::move(theta);
    return result;
  }

  WmaState state;
  state.h_tilde.assign(n_query,
                       std::vector<double>(static_cast<std::size_t>(n_way), 0.0));
  state.alpha = c.adapt.alpha0;

  // Elementwise history maximum of the raw distances; the smoothed vector
  // must stay inside [0, max] because it is a convex combination of zero and
  // past distances.
  std::vector<std::vector<double>> h_max(
      n_query, std::vector<double>(static_cast<std::size_t>(n_way), 0.0));

  optim::Optimizer opt({optim::kind_from_string(c.adapt.optimizer),
                        c.adapt.lr, c.adapt.weight_decay});
  result.trace.reserve(static_cast<std::size_t>(c.adapt.max_iters));

  for (int iter = 1; iter <= c.adapt.max_iters; ++iter) {
    ad::Tape tape;
    const auto options = graph_options(c, episode_seed);
    loss::EpisodeGraph g = loss::build_graph(
        tape, support_x, support_y, view.query_inputs, n_way, theta,
        c.proto.mode == "pcn" ? &phi : nullptr, options);

    if (!(c.adapt.alpha0_first && iter == 1)) {
      state.alpha = anneal_alpha(state.alpha, c.adapt.gamma);
    }
    state.iter = iter;

    std::vector<ad::Tensor> query_probs;
    std::vector<std::vector<double>> soft_targets(n_query);
    std::vector<std::vector<double>> h_rows(n_query);
    query_probs.reserve(n_query);
    for (std::size_t q = 0; q < n_query; ++q) {
      const auto dists =
          loss::distance_nodes(tape, g.query_emb[q], g.prototypes);
      std::vector<double>& h = h_rows[q];
      h.resize(dists.size());
      for (std::size_t j = 0; j < dists.size(); ++j) h[j] = dists[j].scalar();
      query_probs.push_back(loss::probs_from_distances(tape, dists));

      if (c.adapt.use_wma) {
        wma_update(state.h_tilde[q], h, state.alpha);
        soft_targets[q] = pseudo_label_row(state.h_tilde[q]);
      } else {
        soft_targets[q] = pseudo_label_row(h);
      }
      for (std::size_t j = 0; j < h.size(); ++j) {
        h_max[q][j] = std::max(h_max[q][j], h[j]);
        if (state.h_tilde[q][j] < -1e-12 ||
            state.h_tilde[q][j] > h_max[q][j] + 1e-9) {
          throw NumericError(
              "finetune_episode: smoothed distance left its convex hull at "
              "iteration " + std::to_string(iter));
        }
      }
    }
    if (observer) observer(iter, state.alpha, h_rows, state.h_tilde);

    const loss::Breakdown b = loss::finetune_loss(
        tape, g, query_probs, soft_targets, c.loss.lambda_dis,
        c.loss.lambda_coh, c.adapt.epsilon, c.adapt.use_support_ce);
    if (!std::isfinite(b.total)) {
      throw NumericError("finetune_episode: non-finite loss at iteration " +
                         std::to_string(iter) + " (episode seed " +
                         std::to_string(episode_seed) + ")");
    }
    tape.backward(b.total_node);

    std::vector<model::ParamRef> refs = model::encoder_refs(theta);
    std::vector<std::vector<double>> grads;
    grads.reserve(refs.size());
    for (const auto& [w, bias] : g.encoder.layers) {
      grads.push_back(w.grad_or_zeros());
      grads.push_back(bias.grad_or_zeros());
    }
    opt.step(refs, grads);

    result.trace.push_back({iter, state.alpha, b.n_confident, b.ce_support,
                            b.ce_transductive, b.l_dis, b.l_coh,
                            b.total});

    if (iter == c.adapt.max_iters) {
      for (std::size_t q = 0; q < n_query; ++q) {
        result.predictions[q] = argmin_index(
            c.adapt.use_wma ? state.h_tilde[q] : h_rows[q]);
      }
    }
  }

  if (model::params_checksum(phi) != phi_sum) {
    throw NumericError("finetune_episode: prototype network changed");
  }
  result.theta = std::move(theta);
  return result;
}

std::string trace_csv(std::span<const TraceRow> rows) {
  std::string out =
      "iter,alpha,n_confident,ce_support,ce_transductive,l_dis,l_coh_ft,"
      "total\n";
  for (const TraceRow& r : rows) {
    out += std::to_string(r.iter);
    out += ',';
    out += format_double(r.alpha);
    out += ',';
    out += std::to_string(r.n_confident);
    out += ',';
    out += format_double(r.ce_support);
    out += ',';
    out += format_double(r.ce_transductive);
    out += ',';
    out += format_double(r.l_dis);
    out += ',';
    out += format_double(r.l_coh_ft);
    out += ',';
    out += format_double(r.total);
    out += '\n';
  }
  return out;
}

}  // namespace protoadapt::adapt
