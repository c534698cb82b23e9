#include "protoadapt/meta_train.hpp"

#include <cassert>
#include <cmath>

#include "protoadapt/optim.hpp"

namespace protoadapt::train {

namespace {

loss::GraphOptions graph_options(const cfg::RunConfig& c, bool train_encoder,
                                 bool train_pcn, std::uint64_t kmeans_seed) {
  loss::GraphOptions o;
  o.train_encoder = train_encoder;
  o.train_pcn = train_pcn;
  o.pcn_bias = c.model.pcn_bias;
  o.prototypes.mode = proto::mode_from_string(c.proto.mode);
  o.prototypes.k_in = c.model.pcn_k_in;
  o.prototypes.kmeans_seed = kmeans_seed;
  o.prototypes.kmeans.restarts = c.proto.kmeans_restarts;
  return o;
}

std::vector<std::vector<double>> inputs_of(
    const std::vector<data::LabeledVec>& entries) {
  std::vector<std::vector<double>> xs;
  xs.reserve(entries.size());
  for (const auto& e : entries) xs.push_back(e.x);
  return xs;
}

std::vector<int> labels_of(const std::vector<data::LabeledVec>& entries) {
  std::vector<int> ys;
  ys.reserve(entries.size());
  for (const auto& e : entries) ys.push_back(e.label);
  return ys;
}

std::vector<std::vector<double>> collect_grads(
    std::span<const ad::Tensor> leaves) {
  std::vector<std::vector<double>> grads;
  grads.reserve(leaves.size());
  for (const ad::Tensor& t : leaves) grads.push_back(t.grad_or_zeros());
  return grads;
}

std::vector<ad::Tensor> encoder_leaves(const model::EncoderNodes& nodes) {
  std::vector<ad::Tensor> leaves;
  for (const auto& [w, b] : nodes.layers) {
    leaves.push_back(w);
    leaves.push_back(b);
  }
  return leaves;
}

}  // namespace

model::EncoderParams inner_adapt(model::EncoderParams theta,
                                 const model::PcnParams& phi,
                                 const data::Episode& episode,
                                 const cfg::RunConfig& c,
                                 std::uint64_t episode_seed) {
  const auto support_x = inputs_of(episode.support);
  const auto support_y = labels_of(episode.support);
  const std::uint64_t phi_sum = model::params_checksum(phi);

  optim::Optimizer sgd({optim::Kind::kSgd, c.meta.inner_lr, 0.0});
  for (int step = 0; step < c.meta.max_initers; ++step) {
    ad::Tape tape;
    const auto options = graph_options(
        c, /*train_encoder=*/true, /*train_pcn=*/false,
        derive_seed(episode_seed, "inner-kmeans", 0));
    loss::EpisodeGraph g =
        loss::build_graph(tape, support_x, support_y, {}, episode.n_way,
                          theta, &phi, options);
    std::vector<ad::Tensor> probs;
    probs.reserve(g.support_emb.size());
    for (const ad::Tensor& e : g.support_emb) {
      probs.push_back(loss::class_probs(tape, e, g.prototypes));
    }
    const ad::Tensor ce = loss::ce_labeled(tape, probs, support_y);
    if (!std::isfinite(ce.scalar())) {
      throw NumericError("inner_adapt: non-finite support loss at step " +
                         std::to_string(step) + " (episode seed " +
                         std::to_string(episode_seed) + ")");
    }
    tape.backward(ce);

    auto refs = model::encoder_refs(theta);
    const auto leaves = encoder_leaves(g.encoder);
    sgd.step(refs, collect_grads(leaves));
  }
  assert(model::params_checksum(phi) == phi_sum);
  (void)phi_sum;
  return theta;
}

loss::Breakdown outer_step(model::EncoderParams& theta, model::PcnParams& phi,
                           const data::Episode& episode,
                           const cfg::RunConfig& c, optim::Optimizer& opt,
                           std::uint64_t episode_seed) {
  const bool pcn_mode = c.proto.mode == "pcn";
  const bool update_theta = !pcn_mode || c.meta.outer_updates_theta;
  const bool update_phi = pcn_mode;

  const auto support_x = inputs_of(episode.support);
  const auto support_y = labels_of(episode.support);
  const auto query_x = inputs_of(episode.query);
  const auto query_y = labels_of(episode.query);
  const std::uint64_t theta_sum = model::params_checksum(theta);

  ad::Tape tape;
  const auto options =
      graph_options(c, update_theta, update_phi,
                    derive_seed(episode_seed, "outer-kmeans", 0));
  loss::EpisodeGraph g =
      loss::build_graph(tape, support_x, support_y, query_x, episode.n_way,
                        theta, pcn_mode ? &phi : nullptr, options);
  loss::Breakdown b = loss::meta_training_loss(
      tape, g, query_y, c.loss.lambda_dis, c.loss.lambda_coh);
  if (!std::isfinite(b.total)) {
    throw NumericError("outer_step: non-finite joint loss (episode seed " +
                       std::to_string(episode_seed) + ")");
  }
  tape.backward(b.total_node);

  std::vector<model::ParamRef> refs;
  std::vector<ad::Tensor> leaves;
  if (update_theta) {
    for (auto& r : model::encoder_refs(theta)) refs.push_back(r);
    for (auto& t : encoder_leaves(g.encoder)) leaves.push_back(t);
  }
  if (update_phi) {
    for (auto& r : model::pcn_refs(phi, c.model.pcn_bias)) refs.push_back(r);
    leaves.push_back(g.pcn->weight);
    if (c.model.pcn_bias) leaves.push_back(g.pcn->bias);
  }
  opt.step(refs, collect_grads(leaves));

  if (!update_theta) {
    assert(model::params_checksum(theta) == theta_sum);
  }
  (void)theta_sum;
  return b;
}

namespace {

// Optional warm-up: plain classification over all source classes through a
// temporary linear head, before any episodic training.
void warmup(model::EncoderParams& theta, const data::Domain& source,
            const cfg::RunConfig& c) {
  const std::size_t n_classes = source.class_count();
  model::DenseLayer head;
  {
    auto enc = model::make_encoder(c.model.embed_dim, {}, n_classes,
                                   derive_seed(c.seed, "warmup-head", 0));
    head = enc.layers.front();
  }
  optim::Optimizer opt({optim::Kind::kSgd, c.meta.warmup_lr, 0.0});
  for (int it = 0; it < c.meta.warmup_iters; ++it) {
    Rng rng(derive_seed(c.seed, "warmup", static_cast<std::uint64_t>(it)));
    ad::Tape tape;
    auto enc_nodes = model::bind_encoder(tape, theta, true);
    const ad::Tensor hw = tape.leaf({head.in, head.out}, head.weight, true);
    const ad::Tensor hb = tape.leaf({head.out}, head.bias, true);
    std::vector<ad::Tensor> probs;
    std::vector<int> labels;
    for (int b = 0; b < c.meta.warmup_batch; ++b) {
      const std::size_t cls = rng.index(n_classes);
      const auto x = source.sample_instance(cls, rng);
      const ad::Tensor emb = model::encoder_forward(tape, enc_nodes, x);
      // softmax(logits) written through the negated-distance softmax.
      const ad::Tensor logits = tape.add(tape.matmul(emb, hw), hb);
      probs.push_back(tape.softmax_neg(tape.scale(logits, -1.0)));
      labels.push_back(static_cast<int>(cls));
    }
    const ad::Tensor ce = loss::ce_labeled(tape, probs, labels);
    if (!std::isfinite(ce.scalar())) {
      throw NumericError("warmup: non-finite loss at iteration " +
                         std::to_string(it));
    }
    tape.backward(ce);

    std::vector<model::ParamRef> refs = model::encoder_refs(theta);
    refs.push_back({"warmup.head.weight", &head.weight});
    refs.push_back({"warmup.head.bias", &head.bias});
    std::vector<ad::Tensor> leaves = encoder_leaves(enc_nodes);
    leaves.push_back(hw);
    leaves.push_back(hb);
    opt.step(refs, collect_grads(leaves));
  }
}

}  // namespace

MetaTrainResult meta_train(const cfg::RunConfig& c,
                           const data::Domain& source) {
  MetaTrainResult result;
  result.theta = model::make_encoder(c.data.input_dim, c.model.hidden_dims,
                                     c.model.embed_dim,
                                     derive_seed(c.seed, "theta", 0));
  result.phi = model::make_pcn(c.model.pcn_k_in, c.model.embed_dim,
                               derive_seed(c.seed, "phi", 0));
  if (c.meta.warmup_iters > 0) {
    warmup(result.theta, source, c);
  }
  const model::EncoderParams theta0 = result.theta;

  optim::Optimizer outer_opt({optim::kind_from_string(c.meta.outer_optimizer),
                              c.meta.outer_lr, c.meta.outer_weight_decay});
  result.curve.reserve(static_cast<std::size_t>(c.meta.max_iters));
  for (int it = 0; it < c.meta.max_iters; ++it) {
    const std::uint64_t episode_seed =
        derive_seed(c.seed, "meta", static_cast<std::uint64_t>(it));
    const data::Episode episode =
        data::sample_episode(source, c.episode.n_way, c.episode.k_shot,
                             c.episode.q_per_class, episode_seed);
    if (c.meta.reset_theta_per_episode) result.theta = theta0;
    result.theta =
        inner_adapt(std::move(result.theta), result.phi, episode, c,
                    episode_seed);
    const loss::Breakdown b = outer_step(result.theta, result.phi, episode, c,
                                         outer_opt, episode_seed);
    result.curve.push_back({it, b.ce_query, b.l_dis, b.l_coh, b.total});
  }
  return result;
}

std::string curve_csv(std::span<const CurveRow> rows) {
  std::string out = "iter,ce_query,l_dis,l_coh,total\n";
  for (const CurveRow& r : rows) {
    out += std::to_string(r.iter);
    out += ',';
    out += format_double(r.ce_query);
    out += ',';
    out += format_double(r.l_dis);
    out += ',';
    out += format_double(r.l_coh);
    out += ',';
    out += format_double(r.total);
    out += '\n';
  }
  return out;
}

}  // namespace protoadapt::train
