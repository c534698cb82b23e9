#include "protoadapt/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace protoadapt::cfg {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" +
                      v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" +
                      v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key +
                      "': expected a non-negative integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" +
                    v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key,
                                         const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) {
      throw ConfigError("config key '" + key + "': empty list element");
    }
    out.push_back(static_cast<std::size_t>(parse_u64(key, item)));
  }
  return out;
}

std::string join_size_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

struct Key {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Single table drives parsing, the canonical echo, and the hash.
const std::map<std::string, Key>& key_table() {
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> t;
    auto add_u64 = [&](const std::string& k, std::uint64_t RunConfig::* f) {
      t[k] = {[f](RunConfig& c, const std::string& key,
                  const std::string& v) { c.*f = parse_u64(key, v); },
              [f](const RunConfig& c) { return std::to_string(c.*f); }};
    };
    auto add_str = [&](const std::string& k, auto getter, auto setter) {
      t[k] = {[setter](RunConfig& c, const std::string&,
                       const std::string& v) { setter(c, v); },
              [getter](const RunConfig& c) { return getter(c); }};
    };
    auto add_int = [&](const std::string& k, auto member_ptr) {
      t[k] = {[member_ptr](RunConfig& c, const std::string& key,
                           const std::string& v) {
                member_ptr(c) = static_cast<int>(parse_int(key, v));
              },
              [member_ptr](const RunConfig& c) {
                return std::to_string(member_ptr(const_cast<RunConfig&>(c)));
              }};
    };
    auto add_size = [&](const std::string& k, auto member_ptr) {
      t[k] = {[member_ptr](RunConfig& c, const std::string& key,
                           const std::string& v) {
                member_ptr(c) = static_cast<std::size_t>(parse_u64(key, v));
              },
              [member_ptr](const RunConfig& c) {
                return std::to_string(member_ptr(const_cast<RunConfig&>(c)));
              }};
    };
    auto add_dbl = [&](const std::string& k, auto member_ptr) {
      t[k] = {[member_ptr](RunConfig& c, const std::string& key,
                           const std::string& v) {
                member_ptr(c) = parse_double(key, v);
              },
              [member_ptr](const RunConfig& c) {
                return format_double(member_ptr(const_cast<RunConfig&>(c)));
              }};
    };
    auto add_bool = [&](const std::string& k, auto member_ptr) {
      t[k] = {[member_ptr](RunConfig& c, const std::string& key,
                           const std::string& v) {
                member_ptr(c) = parse_bool(key, v);
              },
              [member_ptr](const RunConfig& c) {
                return member_ptr(const_cast<RunConfig&>(c)) ? "true" : "false";
              }};
    };

    add_u64("seed", &RunConfig::seed);
    add_str(
        "out_dir", [](const RunConfig& c) { return c.out_dir; },
        [](RunConfig& c, const std::string& v) { c.out_dir = v; });

    add_size("data.input_dim", [](RunConfig& c) -> auto& { return c.data.input_dim; });
    add_int("data.source_classes", [](RunConfig& c) -> auto& { return c.data.source_classes; });
    add_int("data.target_classes", [](RunConfig& c) -> auto& { return c.data.target_classes; });
    add_dbl("data.mean_spread", [](RunConfig& c) -> auto& { return c.data.mean_spread; });
    add_dbl("data.class_scale_min", [](RunConfig& c) -> auto& { return c.data.class_scale_min; });
    add_dbl("data.class_scale_max", [](RunConfig& c) -> auto& { return c.data.class_scale_max; });
    add_bool("data.target_rotation", [](RunConfig& c) -> auto& { return c.data.target_rotation; });
    add_dbl("data.target_scale_min", [](RunConfig& c) -> auto& { return c.data.target_scale_min; });
    add_dbl("data.target_scale_max", [](RunConfig& c) -> auto& { return c.data.target_scale_max; });
    add_dbl("data.target_offset_spread", [](RunConfig& c) -> auto& { return c.data.target_offset_spread; });
    add_bool("data.target_tanh", [](RunConfig& c) -> auto& { return c.data.target_tanh; });

    add_int("episode.n_way", [](RunConfig& c) -> auto& { return c.episode.n_way; });
    add_int("episode.k_shot", [](RunConfig& c) -> auto& { return c.episode.k_shot; });
    add_int("episode.q_per_class", [](RunConfig& c) -> auto& { return c.episode.q_per_class; });

    t["model.hidden_dims"] = {
        [](RunConfig& c, const std::string& key, const std::string& v) {
          c.model.hidden_dims = parse_size_list(key, v);
        },
        [](const RunConfig& c) { return join_size_list(c.model.hidden_dims); }};
    add_size("model.embed_dim", [](RunConfig& c) -> auto& { return c.model.embed_dim; });
    add_size("model.pcn_k_in", [](RunConfig& c) -> auto& { return c.model.pcn_k_in; });
    add_bool("model.pcn_bias", [](RunConfig& c) -> auto& { return c.model.pcn_bias; });

    add_str(
        "proto.mode", [](const RunConfig& c) { return c.proto.mode; },
        [](RunConfig& c, const std::string& v) { c.proto.mode = v; });
    add_int("proto.kmeans_restarts", [](RunConfig& c) -> auto& { return c.proto.kmeans_restarts; });

    add_int("meta.max_iters", [](RunConfig& c) -> auto& { return c.meta.max_iters; });
    add_int("meta.max_initers", [](RunConfig& c) -> auto& { return c.meta.max_initers; });
    add_dbl("meta.inner_lr", [](RunConfig& c) -> auto& { return c.meta.inner_lr; });
    add_dbl("meta.outer_lr", [](RunConfig& c) -> auto& { return c.meta.outer_lr; });
    add_str(
        "meta.outer_optimizer",
        [](const RunConfig& c) { return c.meta.outer_optimizer; },
        [](RunConfig& c, const std::string& v) { c.meta.outer_optimizer = v; });
    add_dbl("meta.outer_weight_decay", [](RunConfig& c) -> auto& { return c.meta.outer_weight_decay; });
    add_bool("meta.reset_theta_per_episode", [](RunConfig& c) -> auto& { return c.meta.reset_theta_per_episode; });
    add_bool("meta.outer_updates_theta", [](RunConfig& c) -> auto& { return c.meta.outer_updates_theta; });
    add_int("meta.warmup_iters", [](RunConfig& c) -> auto& { return c.meta.warmup_iters; });
    add_dbl("meta.warmup_lr", [](RunConfig& c) -> auto& { return c.meta.warmup_lr; });
    add_int("meta.warmup_batch", [](RunConfig& c) -> auto& { return c.meta.warmup_batch; });

    add_int("adapt.max_iters", [](RunConfig& c) -> auto& { return c.adapt.max_iters; });
    add_dbl("adapt.lr", [](RunConfig& c) -> auto& { return c.adapt.lr; });
    add_str(
        "adapt.optimizer", [](const RunConfig& c) { return c.adapt.optimizer; },
        [](RunConfig& c, const std::string& v) { c.adapt.optimizer = v; });
    add_dbl("adapt.weight_decay", [](RunConfig& c) -> auto& { return c.adapt.weight_decay; });
    add_dbl("adapt.alpha0", [](RunConfig& c) -> auto& { return c.adapt.alpha0; });
    add_dbl("adapt.gamma", [](RunConfig& c) -> auto& { return c.adapt.gamma; });
    add_dbl("adapt.epsilon", [](RunConfig& c) -> auto& { return c.adapt.epsilon; });
    add_bool("adapt.use_wma", [](RunConfig& c) -> auto& { return c.adapt.use_wma; });
    add_bool("adapt.use_support_ce", [](RunConfig& c) -> auto& { return c.adapt.use_support_ce; });
    add_bool("adapt.alpha0_first", [](RunConfig& c) -> auto& { return c.adapt.alpha0_first; });
    add_int("adapt.cluster_kprime", [](RunConfig& c) -> auto& { return c.adapt.cluster_kprime; });

    add_dbl("loss.lambda_dis", [](RunConfig& c) -> auto& { return c.loss.lambda_dis; });
    add_dbl("loss.lambda_coh", [](RunConfig& c) -> auto& { return c.loss.lambda_coh; });

    add_int("eval.n_tasks", [](RunConfig& c) -> auto& { return c.eval.n_tasks; });
    add_int("eval.workers", [](RunConfig& c) -> auto& { return c.eval.workers; });
    add_bool("eval.write_traces", [](RunConfig& c) -> auto& { return c.eval.write_traces; });
    return t;
  }();
  return table;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

RunConfig parse_config_text(std::string_view text, std::string_view origin) {
  RunConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    const auto it = key_table().find(key);
    if (it == key_table().end()) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) +
                        ": unknown config key '" + key + "'");
    }
    it->second.set(c, key, value);
  }
  validate(c);
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open config file: " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

void validate(const RunConfig& c) {
  require(c.data.input_dim >= 1, "data.input_dim must be >= 1");
  require(c.data.source_classes >= c.episode.n_way,
          "data.source_classes must be >= episode.n_way");
  require(c.data.target_classes >= c.episode.n_way,
          "data.target_classes must be >= episode.n_way");
  require(c.data.class_scale_min > 0 &&
              c.data.class_scale_max >= c.data.class_scale_min,
          "data.class_scale_min/max must satisfy 0 < min <= max");
  require(c.data.target_scale_min > 0 &&
              c.data.target_scale_max >= c.data.target_scale_min,
          "data.target_scale_min/max must satisfy 0 < min <= max");
  require(c.data.mean_spread > 0, "data.mean_spread must be > 0");
  require(c.data.target_offset_spread >= 0,
          "data.target_offset_spread must be >= 0");

  require(c.episode.n_way >= 2, "episode.n_way must be >= 2");
  require(c.episode.k_shot >= 1, "episode.k_shot must be >= 1");
  require(c.episode.q_per_class >= 1, "episode.q_per_class must be >= 1");

  for (std::size_t h : c.model.hidden_dims) {
    require(h >= 1, "model.hidden_dims entries must be >= 1");
  }
  require(c.model.embed_dim >= 1, "model.embed_dim must be >= 1");
  require(c.model.pcn_k_in >= 1, "model.pcn_k_in must be >= 1");

  require(c.proto.mode == "pcn" || c.proto.mode == "mean",
          "proto.mode must be 'pcn' or 'mean'");
  require(c.proto.kmeans_restarts >= 1, "proto.kmeans_restarts must be >= 1");

  require(c.meta.max_iters >= 0, "meta.max_iters must be >= 0");
  require(c.meta.max_initers >= 0, "meta.max_initers must be >= 0");
  require(c.meta.inner_lr > 0, "meta.inner_lr must be > 0");
  require(c.meta.outer_lr > 0, "meta.outer_lr must be > 0");
  require(c.meta.outer_optimizer == "sgd" || c.meta.outer_optimizer == "adam",
          "meta.outer_optimizer must be 'sgd' or 'adam'");
  require(c.meta.outer_weight_decay >= 0,
          "meta.outer_weight_decay must be >= 0");
  require(c.meta.warmup_iters >= 0, "meta.warmup_iters must be >= 0");
  require(c.meta.warmup_lr > 0, "meta.warmup_lr must be > 0");
  require(c.meta.warmup_batch >= 1, "meta.warmup_batch must be >= 1");

  require(c.adapt.max_iters >= 0, "adapt.max_iters must be >= 0");
  require(c.adapt.lr > 0, "adapt.lr must be > 0");
  require(c.adapt.optimizer == "sgd" || c.adapt.optimizer == "adam",
          "adapt.optimizer must be 'sgd' or 'adam'");
  require(c.adapt.weight_decay >= 0, "adapt.weight_decay must be >= 0");
  require(c.adapt.alpha0 > 0 && c.adapt.alpha0 <= 1,
          "adapt.alpha0 must be in (0,1]");
  require(c.adapt.gamma > 0 && c.adapt.gamma < 1,
          "adapt.gamma must be in (0,1)");
  require(c.adapt.epsilon >= 0 && c.adapt.epsilon <= 1,
          "adapt.epsilon must be in [0,1]");
  require(c.adapt.cluster_kprime >= 1, "adapt.cluster_kprime must be >= 1");

  if (c.proto.mode == "pcn" &&
      static_cast<std::size_t>(c.episode.k_shot) != c.model.pcn_k_in) {
    require(static_cast<std::size_t>(c.episode.k_shot) > c.model.pcn_k_in,
            "episode.k_shot below model.pcn_k_in: the prototype network "
            "expects exactly pcn_k_in embeddings per class");
    require(static_cast<std::size_t>(c.adapt.cluster_kprime) ==
                c.model.pcn_k_in,
            "adapt.cluster_kprime must equal model.pcn_k_in when clustering "
            "bridges k_shot to the prototype network input");
  }

  require(c.loss.lambda_dis >= 0, "loss.lambda_dis must be >= 0");
  require(c.loss.lambda_coh >= 0, "loss.lambda_coh must be >= 0");

  require(c.eval.n_tasks >= 1, "eval.n_tasks must be >= 1");
  require(c.eval.workers >= 0, "eval.workers must be >= 0");
}

std::string canonical_echo(const RunConfig& c) {
  std::string out;
  for (const auto& [key, fns] : key_table()) {
    out += key;
    out += " = ";
    out += fns.get(c);
    out += '\n';
  }
  return out;
}

std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_echo(c))));
  return buf;
}

std::string meta_stage_hash(const RunConfig& c) {
  std::string out;
  for (const auto& [key, fns] : key_table()) {
    if (key.rfind("adapt.", 0) == 0 || key.rfind("eval.", 0) == 0 ||
        key == "out_dir") {
      continue;
    }
    out += key;
    out += " = ";
    out += fns.get(c);
    out += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(out)));
  return buf;
}

const std::vector<std::string>& variant_ids() {
  static const std::vector<std::string> ids = {
      "full",          "no_pcn",          "no_l_dis",
      "no_l_coh",      "no_ce_support",   "no_ce_transductive",
      "no_wma",        "protonet"};
  return ids;
}

RunConfig apply_variant(RunConfig c, std::string_view id) {
  if (id == "full") {
    return c;
  }
  if (id == "no_pcn") {
    c.proto.mode = "mean";
    return c;
  }
  if (id == "no_l_dis") {
    c.loss.lambda_dis = 0.0;
    return c;
  }
  if (id == "no_l_coh") {
    c.loss.lambda_coh = 0.0;
    return c;
  }
  if (id == "no_ce_support") {
    c.adapt.use_support_ce = false;
    return c;
  }
  if (id == "no_ce_transductive") {
    c.adapt.epsilon = 1.0;
    return c;
  }
  if (id == "no_wma") {
    c.adapt.use_wma = false;
    return c;
  }
  if (id == "protonet") {
    c.proto.mode = "mean";
    c.loss.lambda_dis = 0.0;
    c.loss.lambda_coh = 0.0;
    c.meta.max_initers = 0;
    c.adapt.max_iters = 0;
    c.adapt.use_wma = false;
    c.adapt.epsilon = 1.0;
    return c;
  }
  throw ConfigError("unknown ablation variant '" + std::string(id) + "'");
}

bool clustering_active(const RunConfig& c) {
  return c.proto.mode == "pcn" &&
         static_cast<std::size_t>(c.episode.k_shot) != c.model.pcn_k_in;
}

}  // namespace protoadapt::cfg
