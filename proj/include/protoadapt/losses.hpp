#pragma once

#include <optional>
#include <span>
#include <vector>

#include "protoadapt/model.hpp"
#include "protoadapt/prototypes.hpp"
#include "protoadapt/tensor.hpp"

namespace protoadapt::loss {

/// Squared distances from one embedding to every prototype, in class order.
std::vector<ad::Tensor> distance_nodes(ad::Tape& tape, ad::Tensor embedding,
                                       std::span<const ad::Tensor> prototypes);

/// Softmax over negated distances.
ad::Tensor probs_from_distances(ad::Tape& tape,
                                std::span<const ad::Tensor> distances);

/// Class prediction probabilities: softmax over negated squared distances to
/// the prototypes.
ad::Tensor class_probs(ad::Tape& tape, ad::Tensor embedding,
                       std::span<const ad::Tensor> prototypes);

/// Sum over instances of -log p(true class), natural log, log floored at
/// 1e-30 so degenerate predictions stay finite.
ad::Tensor ce_labeled(ad::Tape& tape, std::span<const ad::Tensor> probs,
                      std::span<const int> labels);

/// Reciprocal of the summed squared distances over all unordered prototype
/// pairs; the +1e-12 guard keeps a collapsed prototype set finite. Undefined
/// for fewer than two prototypes.
ad::Tensor discriminative_loss(ad::Tape& tape,
                               std::span<const ad::Tensor> prototypes);
constexpr double kDisGuard = 1e-12;

/// Sum over labeled embeddings of the squared distance to their class
/// prototype.
ad::Tensor cohesive_loss(ad::Tape& tape, std::span<const ad::Tensor> prototypes,
                         std::span<const ad::Tensor> embeddings,
                         std::span<const int> labels);

struct TransductiveTerm {
  std::optional<ad::Tensor> value;  // absent when no query clears the gate
  int n_confident = 0;
};

/// Soft-target cross-entropy over the queries whose pseudo-label confidence
/// max(target row) strictly exceeds epsilon. Targets are constants: no
/// gradient flows into the pseudo-labels.
TransductiveTerm transductive_ce(
    ad::Tape& tape, std::span<const ad::Tensor> query_probs,
    std::span<const std::vector<double>> soft_targets, double epsilon);

/// All scalar components of a joint loss plus the tape node of the total.
/// The total always equals the weighted sum of its parts.
struct Breakdown {
  double ce_query = 0.0;
  double ce_support = 0.0;
  double ce_transductive = 0.0;
  double l_dis = 0.0;
  double l_coh = 0.0;
  double total = 0.0;
  int n_confident = 0;
  ad::Tensor total_node;
};

/// Everything one episode needs on a single tape.
struct EpisodeGraph {
  model::EncoderNodes encoder;
  std::optional<model::PcnNodes> pcn;
  std::vector<ad::Tensor> support_emb;
  std::vector<int> support_labels;
  std::vector<ad::Tensor> query_emb;
  std::vector<ad::Tensor> prototypes;
};

struct GraphOptions {
  bool train_encoder = false;
  bool train_pcn = false;
  bool pcn_bias = true;
  proto::PrototypeSpec prototypes;
};

EpisodeGraph build_graph(ad::Tape& tape,
                         std::span<const std::vector<double>> support_x,
                         std::span<const int> support_labels,
                         std::span<const std::vector<double>> query_x,
                         int n_way, const model::EncoderParams& encoder,
                         const model::PcnParams* pcn,
                         const GraphOptions& options);

/// Meta-training joint loss: query CE plus weighted discriminative and
/// query-side cohesive regularizers. Components whose weight is exactly zero
/// are still reported but contribute no tape nodes to the total.
Breakdown meta_training_loss(ad::Tape& tape, const EpisodeGraph& graph,
                             std::span<const int> query_labels,
                             double lambda_dis, double lambda_coh);

/// Fine-tuning joint loss: support CE, gated transductive CE against the
/// pseudo-labels, and the regularizers with the cohesive term computed on
/// the support set.
Breakdown finetune_loss(ad::Tape& tape, const EpisodeGraph& graph,
                        std::span<const ad::Tensor> query_probs,
                        std::span<const std::vector<double>> soft_targets,
                        double lambda_dis, double lambda_coh, double epsilon,
                        bool use_support_ce);

}  // namespace protoadapt::loss
