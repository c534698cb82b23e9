#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "protoadapt/tensor.hpp"

namespace protoadapt::model {

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // row-major [in x out]
  std::vector<double> bias;    // [out]
};

/// MLP feature encoder. ReLU between layers, no activation after the last
/// one, so embeddings may be negative.
struct EncoderParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().in; }
  std::size_t output_dim() const { return layers.back().out; }
  std::size_t parameter_count() const;
  void validate() const;
};

/// Prototype calculator: a single linear layer followed by ReLU. Consumes
/// k_in concatenated embeddings and emits one prototype, so its parameter
/// count depends on k_in and d only, never on the raw shot count when
/// clustering feeds it.
struct PcnParams {
  std::size_t k_in = 0;
  std::size_t d = 0;
  std::vector<double> weight;  // [(k_in*d) x d]
  std::vector<double> bias;    // [d]

  std::size_t input_dim() const { return k_in * d; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
  void validate() const;
};

/// Fan-based uniform init for weights, zero biases, all streams derived from
/// the given seed.
EncoderParams make_encoder(std::size_t input_dim,
                           std::span<const std::size_t> hidden_dims,
                           std::size_t embed_dim, std::uint64_t seed);
PcnParams make_pcn(std::size_t k_in, std::size_t d, std::uint64_t seed);

/// PCN weights that average the k_in stacked copies of each coordinate;
/// with a zero bias and nonnegative inputs this reproduces the mean
/// prototype exactly.
PcnParams make_averaging_pcn(std::size_t k_in, std::size_t d);

// ---- tape bindings ----

/// One leaf pair (weight, bias) per layer on some tape.
struct EncoderNodes {
  std::vector<std::pair<ad::Tensor, ad::Tensor>> layers;
};

struct PcnNodes {
  ad::Tensor weight;
  ad::Tensor bias;
  bool use_bias = true;
};

EncoderNodes bind_encoder(ad::Tape& tape, const EncoderParams& params,
                          bool trainable);
PcnNodes bind_pcn(ad::Tape& tape, const PcnParams& params, bool trainable,
                  bool use_bias);

ad::Tensor encoder_forward(ad::Tape& tape, const EncoderNodes& nodes,
                           std::span<const double> x);
/// Accepts an already-embedded tensor (e.g. a row produced on this tape).
ad::Tensor encoder_forward(ad::Tape& tape, const EncoderNodes& nodes,
                           ad::Tensor x);

ad::Tensor pcn_forward(ad::Tape& tape, const PcnNodes& nodes,
                       ad::Tensor concatenated);

/// Mutable views over every trainable array of a parameter set, in a fixed
/// order (encoder layers first, then PCN weight and bias).
struct ParamRef {
  std::string name;
  std::vector<double>* value = nullptr;
};
std::vector<ParamRef> encoder_refs(EncoderParams& p);
std::vector<ParamRef> pcn_refs(PcnParams& p, bool include_bias);

/// Order-sensitive checksum over all arrays, for phase-isolation checks.
std::uint64_t params_checksum(const EncoderParams& p);
std::uint64_t params_checksum(const PcnParams& p);

}  // namespace protoadapt::model
