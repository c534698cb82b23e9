#include "protoadapt/losses.hpp"

#include <algorithm>
#include <cmath>

namespace protoadapt::loss {

std::vector<ad::Tensor> distance_nodes(ad::Tape& tape, ad::Tensor embedding,
                                       std::span<const ad::Tensor> prototypes) {
  std::vector<ad::Tensor> out;
  out.reserve(prototypes.size());
  for (const ad::Tensor& p : prototypes) {
    out.push_back(tape.sq_euclidean(embedding, p));
  }
  return out;
}

ad::Tensor probs_from_distances(ad::Tape& tape,
                                std::span<const ad::Tensor> distances) {
  return tape.softmax_neg(tape.concat(distances));
}

ad::Tensor class_probs(ad::Tape& tape, ad::Tensor embedding,
                       std::span<const ad::Tensor> prototypes) {
  const auto dists = distance_nodes(tape, embedding, prototypes);
  return probs_from_distances(tape, dists);
}

namespace {

ad::Tensor onehot_log_prob(ad::Tape& tape, ad::Tensor probs, int label) {
  std::vector<double> onehot(probs.size(), 0.0);
  onehot[static_cast<std::size_t>(label)] = 1.0;
  const ad::Tensor target = tape.leaf({probs.size()}, std::move(onehot), false);
  return tape.sum(tape.mul(target, tape.log(probs)));
}

ad::Tensor add_chain(ad::Tape& tape, std::span<const ad::Tensor> terms) {
  ad::Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
  return acc;
}

}  // namespace

ad::Tensor ce_labeled(ad::Tape& tape, std::span<const ad::Tensor> probs,
                      std::span<const int> labels) {
  if (probs.size() != labels.size() || probs.empty()) {
    throw DimensionError("ce_labeled: probs/labels count mismatch or empty");
  }
  std::vector<ad::Tensor> terms;
  terms.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    terms.push_back(onehot_log_prob(tape, probs[i], labels[i]));
  }
  return tape.scale(add_chain(tape, terms), -1.0);
}

ad::Tensor discriminative_loss(ad::Tape& tape,
                               std::span<const ad::Tensor> prototypes) {
  if (prototypes.size() < 2) {
    throw DimensionError(
        "discriminative_loss: needs at least two prototypes, got " +
        std::to_string(prototypes.size()));
  }
  std::vector<ad::Tensor> pair_terms;
  pair_terms.reserve(prototypes.size() * (prototypes.size() - 1) / 2);
  for (std::size_t i = 0; i < prototypes.size(); ++i) {
    for (std::size_t j = i + 1; j < prototypes.size(); ++j) {
      pair_terms.push_back(tape.sq_euclidean(prototypes[i], prototypes[j]));
    }
  }
  return tape.reciprocal_guarded(add_chain(tape, pair_terms), kDisGuard);
}

ad::Tensor cohesive_loss(ad::Tape& tape,
                         std::span<const ad::Tensor> prototypes,
                         std::span<const ad::Tensor> embeddings,
                         std::span<const int> labels) {
  if (embeddings.size() != labels.size() || embeddings.empty()) {
    throw DimensionError("cohesive_loss: embeddings/labels mismatch or empty");
  }
  std::vector<ad::Tensor> terms;
  terms.reserve(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c >= prototypes.size()) {
      throw DimensionError("cohesive_loss: label out of range");
    }
    terms.push_back(tape.sq_euclidean(prototypes[c], embeddings[i]));
  }
  return add_chain(tape, terms);
}

TransductiveTerm transductive_ce(
    ad::Tape& tape, std::span<const ad::Tensor> query_probs,
    std::span<const std::vector<double>> soft_targets, double epsilon) {
  if (query_probs.size() != soft_targets.size()) {
    throw DimensionError("transductive_ce: probs/targets count mismatch");
  }
  std::vector<ad::Tensor> terms;
  for (std::size_t q = 0; q < query_probs.size(); ++q) {
    const auto& target = soft_targets[q];
    const double confidence =
        *std::max_element(target.begin(), target.end());
    if (!(confidence > epsilon)) continue;  // strict gate
    const ad::Tensor t =
        tape.leaf({target.size()},
                  std::vector<double>(target.begin(), target.end()), false);
    terms.push_back(tape.sum(tape.mul(t, tape.log(query_probs[q]))));
  }
  TransductiveTerm out;
  out.n_confident = static_cast<int>(terms.size());
  if (!terms.empty()) {
    out.value = tape.scale(add_chain(tape, terms), -1.0);
  }
  return out;
}

EpisodeGraph build_graph(ad::Tape& tape,
                         std::span<const std::vector<double>> support_x,
                         std::span<const int> support_labels,
                         std::span<const std::vector<double>> query_x,
                         int n_way, const model::EncoderParams& encoder,
                         const model::PcnParams* pcn,
                         const GraphOptions& options) {
  EpisodeGraph g;
  g.encoder = model::bind_encoder(tape, encoder, options.train_encoder);
  if (pcn != nullptr && options.prototypes.mode == proto::Mode::kPcn) {
    g.pcn = model::bind_pcn(tape, *pcn, options.train_pcn, options.pcn_bias);
  }
  g.support_labels.assign(support_labels.begin(), support_labels.end());
  g.support_emb.reserve(support_x.size());
  for (const auto& x : support_x) {
    g.support_emb.push_back(model::encoder_forward(tape, g.encoder, x));
  }
  g.query_emb.reserve(query_x.size());
  for (const auto& x : query_x) {
    g.query_emb.push_back(model::encoder_forward(tape, g.encoder, x));
  }
  g.prototypes = proto::build_prototypes(
      tape, g.support_emb, g.support_labels, n_way,
      g.pcn ? &*g.pcn : nullptr, options.prototypes);
  return g;
}

namespace {

// Accumulates weighted terms on the tape; zero-weight terms contribute no
// nodes at all, which keeps gated runs bitwise identical to runs without the
// term.
struct TotalBuilder {
  ad::Tape& tape;
  std::optional<ad::Tensor> node;

  void add(ad::Tensor term, double weight) {
    if (weight == 0.0) return;
    ad::Tensor t = weight == 1.0 ? term : tape.scale(term, weight);
    node = node ? tape.add(*node, t) : t;
  }
};

}  // namespace

Breakdown meta_training_loss(ad::Tape& tape, const EpisodeGraph& graph,
                             std::span<const int> query_labels,
                             double lambda_dis, double lambda_coh) {
  if (query_labels.size() != graph.query_emb.size()) {
    throw DimensionError("meta_training_loss: query labels missing");
  }
  std::vector<ad::Tensor> query_probs;
  query_probs.reserve(graph.query_emb.size());
  for (const ad::Tensor& e : graph.query_emb) {
    query_probs.push_back(class_probs(tape, e, graph.prototypes));
  }
  const ad::Tensor ce = ce_labeled(tape, query_probs, query_labels);
  const ad::Tensor dis = discriminative_loss(tape, graph.prototypes);
  const ad::Tensor coh =
      cohesive_loss(tape, graph.prototypes, graph.query_emb, query_labels);

  Breakdown b;
  b.ce_query = ce.scalar();
  b.l_dis = dis.scalar();
  b.l_coh = coh.scalar();
  TotalBuilder total{tape, std::nullopt};
  total.add(ce, 1.0);
  total.add(dis, lambda_dis);
  total.add(coh, lambda_coh);
  b.total_node = *total.node;
  b.total = b.total_node.scalar();
  return b;
}

Breakdown finetune_loss(ad::Tape& tape, const EpisodeGraph& graph,
                        std::span<const ad::Tensor> query_probs,
                        std::span<const std::vector<double>> soft_targets,
                        double lambda_dis, double lambda_coh, double epsilon,
                        bool use_support_ce) {
  std::vector<ad::Tensor> support_probs;
  support_probs.reserve(graph.support_emb.size());
  for (const ad::Tensor& e : graph.support_emb) {
    support_probs.push_back(class_probs(tape, e, graph.prototypes));
  }
  const ad::Tensor ce_s =
      ce_labeled(tape, support_probs, graph.support_labels);
  const TransductiveTerm tr =
      transductive_ce(tape, query_probs, soft_targets, epsilon);
  const ad::Tensor dis = discriminative_loss(tape, graph.prototypes);
  const ad::Tensor coh = cohesive_loss(tape, graph.prototypes,
                                       graph.support_emb, graph.support_labels);

  Breakdown b;
  b.ce_support = ce_s.scalar();
  b.ce_transductive = tr.value ? tr.value->scalar() : 0.0;
  b.n_confident = tr.n_confident;
  b.l_dis = dis.scalar();
  b.l_coh = coh.scalar();
  TotalBuilder total{tape, std::nullopt};
  total.add(ce_s, use_support_ce ? 1.0 : 0.0);
  if (tr.value) total.add(*tr.value, 1.0);
  total.add(dis, lambda_dis);
  total.add(coh, lambda_coh);
  if (!total.node) {
    // Every term gated or weighted away; an explicit zero keeps backward
    // callable.
    total.node = tape.constant(0.0);
  }
  b.total_node = *total.node;
  b.total = b.total_node.scalar();
  return b;
}

}  // namespace protoadapt::loss
