#include "protoadapt/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace protoadapt::model {

namespace {

void append_array(std::string& out, const std::vector<double>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  out += ']';
}

std::vector<double> read_array(const nlohmann::json& j, const std::string& key,
                               const std::string& origin) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw IoError(origin + ": missing numeric array '" + key + "'");
  }
  std::vector<double> out;
  out.reserve(j[key].size());
  for (const auto& x : j[key]) {
    if (!x.is_number()) {
      throw IoError(origin + ": '" + key + "' contains a non-number");
    }
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  std::string out;
  out.reserve(1 << 16);
  out += "{\"format_version\":";
  out += std::to_string(ckpt.format_version);
  out += ",\"config_hash\":\"";
  out += ckpt.config_hash;
  out += "\",\"encoder\":[";
  for (std::size_t i = 0; i < ckpt.encoder.layers.size(); ++i) {
    const DenseLayer& l = ckpt.encoder.layers[i];
    if (i) out += ',';
    out += "{\"rows\":";
    out += std::to_string(l.in);
    out += ",\"cols\":";
    out += std::to_string(l.out);
    out += ",\"weight\":";
    append_array(out, l.weight);
    out += ",\"bias\":";
    append_array(out, l.bias);
    out += '}';
  }
  out += "],\"pcn\":{\"k_in\":";
  out += std::to_string(ckpt.pcn.k_in);
  out += ",\"d\":";
  out += std::to_string(ckpt.pcn.d);
  out += ",\"weight\":";
  append_array(out, ckpt.pcn.weight);
  out += ",\"bias\":";
  append_array(out, ckpt.pcn.bias);
  out += "}}\n";
  return out;
}

Checkpoint checkpoint_from_json(const std::string& text,
                                const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(origin + ": checkpoint parse error: " + e.what());
  }
  if (!j.is_object() || !j.contains("format_version")) {
    throw IoError(origin + ": not a checkpoint file");
  }
  Checkpoint ckpt;
  ckpt.format_version = j["format_version"].get<int>();
  if (ckpt.format_version != 1) {
    throw IoError(origin + ": unsupported checkpoint format_version " +
                  std::to_string(ckpt.format_version));
  }
  ckpt.config_hash = j.value("config_hash", std::string());
  if (!j.contains("encoder") || !j["encoder"].is_array() ||
      j["encoder"].empty()) {
    throw IoError(origin + ": missing encoder layers");
  }
  for (const auto& jl : j["encoder"]) {
    DenseLayer l;
    l.in = jl.value("rows", std::size_t{0});
    l.out = jl.value("cols", std::size_t{0});
    l.weight = read_array(jl, "weight", origin);
    l.bias = read_array(jl, "bias", origin);
    if (l.weight.size() != l.in * l.out || l.bias.size() != l.out) {
      throw IoError(origin + ": encoder layer arrays do not match dims");
    }
    ckpt.encoder.layers.push_back(std::move(l));
  }
  if (!j.contains("pcn") || !j["pcn"].is_object()) {
    throw IoError(origin + ": missing pcn block");
  }
  const auto& jp = j["pcn"];
  ckpt.pcn.k_in = jp.value("k_in", std::size_t{0});
  ckpt.pcn.d = jp.value("d", std::size_t{0});
  ckpt.pcn.weight = read_array(jp, "weight", origin);
  ckpt.pcn.bias = read_array(jp, "bias", origin);
  if (ckpt.pcn.weight.size() != ckpt.pcn.k_in * ckpt.pcn.d * ckpt.pcn.d ||
      ckpt.pcn.bias.size() != ckpt.pcn.d) {
    throw IoError(origin + ": pcn arrays do not match k_in/d");
  }
  ckpt.encoder.validate();
  ckpt.pcn.validate();
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open checkpoint file for writing: " + path.string());
  }
  out << checkpoint_to_json(ckpt);
  if (!out) {
    throw IoError("failed writing checkpoint: " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint file: " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str(), path.string());
}

void check_compatible(const Checkpoint& ckpt, std::size_t input_dim,
                      std::size_t embed_dim, std::size_t pcn_k_in) {
  if (ckpt.encoder.input_dim() != input_dim) {
    throw IoError("checkpoint encoder: input dim " +
                  std::to_string(ckpt.encoder.input_dim()) +
                  " does not match configured " + std::to_string(input_dim));
  }
  if (ckpt.encoder.output_dim() != embed_dim) {
    throw IoError("checkpoint encoder: embed dim " +
                  std::to_string(ckpt.encoder.output_dim()) +
                  " does not match configured " + std::to_string(embed_dim));
  }
  if (ckpt.pcn.k_in != pcn_k_in || ckpt.pcn.d != embed_dim) {
    throw IoError("checkpoint pcn: shape (k_in=" +
                  std::to_string(ckpt.pcn.k_in) +
                  ", d=" + std::to_string(ckpt.pcn.d) +
                  ") does not match configured (k_in=" +
                  std::to_string(pcn_k_in) +
                  ", d=" + std::to_string(embed_dim) + ")");
  }
}

}  // namespace protoadapt::model
