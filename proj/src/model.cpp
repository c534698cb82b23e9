#include "protoadapt/model.hpp"

#include <cmath>

namespace protoadapt::model {

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void EncoderParams::validate() const {
  if (layers.empty()) {
    throw DimensionError("encoder: no layers");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const DenseLayer& l = layers[i];
    if (l.weight.size() != l.in * l.out || l.bias.size() != l.out) {
      throw DimensionError("encoder layer " + std::to_string(i) +
                           ": array sizes do not match dims");
    }
    if (i > 0 && layers[i - 1].out != l.in) {
      throw DimensionError("encoder layer " + std::to_string(i) +
                           ": input dim " + std::to_string(l.in) +
                           " does not chain from previous out dim " +
                           std::to_string(layers[i - 1].out));
    }
    if (!all_finite(l.weight) || !all_finite(l.bias)) {
      throw NumericError("encoder layer " + std::to_string(i) +
                         ": non-finite parameter");
    }
  }
}

void PcnParams::validate() const {
  if (weight.size() != k_in * d * d || bias.size() != d) {
    throw DimensionError("pcn: array sizes do not match k_in=" +
                         std::to_string(k_in) + ", d=" + std::to_string(d));
  }
  if (!all_finite(weight) || !all_finite(bias)) {
    throw NumericError("pcn: non-finite parameter");
  }
}

namespace {

DenseLayer init_layer(std::size_t in, std::size_t out, std::uint64_t seed) {
  DenseLayer l;
  l.in = in;
  l.out = out;
  l.weight.resize(in * out);
  l.bias.assign(out, 0.0);
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Rng rng(seed);
  for (double& w : l.weight) w = rng.uniform(-limit, limit);
  return l;
}

}  // namespace

EncoderParams make_encoder(std::size_t input_dim,
                           std::span<const std::size_t> hidden_dims,
                           std::size_t embed_dim, std::uint64_t seed) {
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(embed_dim);
  EncoderParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    p.layers.push_back(
        init_layer(dims[i], dims[i + 1], derive_seed(seed, "encoder-layer", i)));
  }
  p.validate();
  return p;
}

PcnParams make_pcn(std::size_t k_in, std::size_t d, std::uint64_t seed) {
  PcnParams p;
  p.k_in = k_in;
  p.d = d;
  const std::size_t rows = k_in * d;
  p.weight.resize(rows * d);
  p.bias.assign(d, 0.0);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + d));
  Rng rng(derive_seed(seed, "pcn", 0));
  for (double& w : p.weight) w = rng.uniform(-limit, limit);
  p.validate();
  return p;
}

PcnParams make_averaging_pcn(std::size_t k_in, std::size_t d) {
  PcnParams p;
  p.k_in = k_in;
  p.d = d;
  p.weight.assign(k_in * d * d, 0.0);
  p.bias.assign(d, 0.0);
  const double w = 1.0 / static_cast<double>(k_in);
  for (std::size_t k = 0; k < k_in; ++k) {
    for (std::size_t j = 0; j < d; ++j) {
      p.weight[(k * d + j) * d + j] = w;
    }
  }
  return p;
}

EncoderNodes bind_encoder(ad::Tape& tape, const EncoderParams& params,
                          bool trainable) {
  EncoderNodes nodes;
  nodes.layers.reserve(params.layers.size());
  for (const DenseLayer& l : params.layers) {
    nodes.layers.emplace_back(
        tape.leaf({l.in, l.out}, l.weight, trainable),
        tape.leaf({l.out}, l.bias, trainable));
  }
  return nodes;
}

PcnNodes bind_pcn(ad::Tape& tape, const PcnParams& params, bool trainable,
                  bool use_bias) {
  PcnNodes nodes;
  nodes.weight = tape.leaf({params.k_in * params.d, params.d}, params.weight,
                           trainable);
  nodes.bias = tape.leaf({params.d}, params.bias, trainable && use_bias);
  nodes.use_bias = use_bias;
  return nodes;
}

ad::Tensor encoder_forward(ad::Tape& tape, const EncoderNodes& nodes,
                           std::span<const double> x) {
  return encoder_forward(
      tape, nodes,
      tape.leaf({x.size()}, std::vector<double>(x.begin(), x.end()), false));
}

ad::Tensor encoder_forward(ad::Tape& tape, const EncoderNodes& nodes,
                           ad::Tensor x) {
  ad::Tensor h = x;
  for (std::size_t i = 0; i < nodes.layers.size(); ++i) {
    const auto& [w, b] = nodes.layers[i];
    if (h.size() != w.shape()[0]) {
      throw DimensionError("encoder layer " + std::to_string(i) +
                           ": input length " + std::to_string(h.size()) +
                           " does not match weight rows " +
                           std::to_string(w.shape()[0]));
    }
    h = tape.add(tape.matmul(h, w), b);
    if (i + 1 < nodes.layers.size()) h = tape.relu(h);
  }
  return h;
}

ad::Tensor pcn_forward(ad::Tape& tape, const PcnNodes& nodes,
                       ad::Tensor concatenated) {
  if (concatenated.size() != nodes.weight.shape()[0]) {
    throw DimensionError("pcn: input length " +
                         std::to_string(concatenated.size()) +
                         " does not match weight rows " +
                         std::to_string(nodes.weight.shape()[0]));
  }
  ad::Tensor h = tape.matmul(concatenated, nodes.weight);
  if (nodes.use_bias) h = tape.add(h, nodes.bias);
  return tape.relu(h);
}

std::vector<ParamRef> encoder_refs(EncoderParams& p) {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    refs.push_back({"encoder.layer" + std::to_string(i) + ".weight",
                    &p.layers[i].weight});
    refs.push_back(
        {"encoder.layer" + std::to_string(i) + ".bias", &p.layers[i].bias});
  }
  return refs;
}

std::vector<ParamRef> pcn_refs(PcnParams& p, bool include_bias) {
  std::vector<ParamRef> refs;
  refs.push_back({"pcn.weight", &p.weight});
  if (include_bias) refs.push_back({"pcn.bias", &p.bias});
  return refs;
}

std::uint64_t params_checksum(const EncoderParams& p) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& l : p.layers) {
    h = fnv1a64(l.weight.data(), l.weight.size() * sizeof(double), h);
    h = fnv1a64(l.bias.data(), l.bias.size() * sizeof(double), h);
  }
  return h;
}

std::uint64_t params_checksum(const PcnParams& p) {
  std::uint64_t h = fnv1a64(p.weight.data(), p.weight.size() * sizeof(double));
  return fnv1a64(p.bias.data(), p.bias.size() * sizeof(double), h);
}

}  // namespace protoadapt::model
