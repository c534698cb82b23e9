#include "protoadapt/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

namespace protoadapt::data {

std::vector<double> AffineTransform::apply(std::span<const double> x) const {
  const std::size_t dim = x.size();
  std::vector<double> y(dim, 0.0);
  if (matrix.empty()) {
    std::copy(x.begin(), x.end(), y.begin());
  } else {
    for (std::size_t i = 0; i < dim; ++i) {
      double acc = 0.0;
      const double* row = matrix.data() + i * dim;
      for (std::size_t j = 0; j < dim; ++j) acc += row[j] * x[j];
      y[i] = acc;
    }
  }
  if (!offset.empty()) {
    for (std::size_t i = 0; i < dim; ++i) y[i] += offset[i];
  }
  if (tanh_nonlinearity) {
    for (double& v : y) v = std::tanh(v);
  }
  return y;
}

Domain::Domain(DomainSpec spec) : spec_(std::move(spec)) {
  const std::size_t n = spec_.class_ids.size();
  if (n == 0) {
    throw ConfigError("domain '" + spec_.name + "': no classes");
  }
  if (spec_.class_means.size() != n || spec_.class_scales.size() != n) {
    throw ConfigError("domain '" + spec_.name +
                      "': class_means/class_scales must match class count");
  }
  for (const auto& m : spec_.class_means) {
    if (m.size() != spec_.input_dim) {
      throw ConfigError("domain '" + spec_.name +
                        "': class mean dim does not match input_dim");
    }
  }
  for (double s : spec_.class_scales) {
    if (!(s > 0.0)) {
      throw ConfigError("domain '" + spec_.name +
                        "': class scales must be > 0");
    }
  }
  if (!spec_.transform.matrix.empty() &&
      spec_.transform.matrix.size() != spec_.input_dim * spec_.input_dim) {
    throw ConfigError("domain '" + spec_.name +
                      "': transform matrix must be input_dim x input_dim");
  }
  if (!spec_.transform.offset.empty() &&
      spec_.transform.offset.size() != spec_.input_dim) {
    throw ConfigError("domain '" + spec_.name +
                      "': transform offset must have length input_dim");
  }
}

std::vector<double> Domain::sample_instance(std::size_t class_index,
                                            Rng& rng) const {
  const auto& mean = spec_.class_means[class_index];
  const double scale = spec_.class_scales[class_index];
  std::vector<double> x(spec_.input_dim);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = mean[i] + scale * rng.normal();
  }
  return spec_.transform.apply(x);
}

void Episode::validate(std::size_t input_dim) const {
  if (n_way < 1 || k_shot < 1 || q_per_class < 1) {
    throw DimensionError("episode: non-positive n_way/k_shot/q_per_class");
  }
  if (support.size() != static_cast<std::size_t>(n_way) * k_shot) {
    throw DimensionError("episode: expected " +
                         std::to_string(n_way * k_shot) +
                         " support entries, got " +
                         std::to_string(support.size()));
  }
  if (query.size() != static_cast<std::size_t>(n_way) * q_per_class) {
    throw DimensionError("episode: expected " +
                         std::to_string(n_way * q_per_class) +
                         " query entries, got " + std::to_string(query.size()));
  }
  std::vector<int> sup_counts(n_way, 0), qry_counts(n_way, 0);
  for (const auto& e : support) {
    if (e.label < 0 || e.label >= n_way || e.x.size() != input_dim) {
      throw DimensionError("episode: bad support entry");
    }
    ++sup_counts[static_cast<std::size_t>(e.label)];
  }
  for (const auto& e : query) {
    if (e.label < 0 || e.label >= n_way || e.x.size() != input_dim) {
      throw DimensionError("episode: bad query entry");
    }
    ++qry_counts[static_cast<std::size_t>(e.label)];
  }
  for (int n = 0; n < n_way; ++n) {
    if (sup_counts[static_cast<std::size_t>(n)] != k_shot ||
        qry_counts[static_cast<std::size_t>(n)] != q_per_class) {
      throw DimensionError("episode: class " + std::to_string(n) +
                           " is not balanced");
    }
  }
  if (class_map.size() != static_cast<std::size_t>(n_way)) {
    throw DimensionError("episode: class_map size != n_way");
  }
  std::set<int> unique(class_map.begin(), class_map.end());
  if (unique.size() != class_map.size()) {
    throw DimensionError("episode: class_map is not injective");
  }
}

Episode sample_episode(const Domain& domain, int n_way, int k_shot,
                       int q_per_class, std::uint64_t episode_seed) {
  if (static_cast<std::size_t>(n_way) > domain.class_count()) {
    throw ConfigError("sample_episode: n_way " + std::to_string(n_way) +
                      " exceeds domain class count " +
                      std::to_string(domain.class_count()));
  }
  Rng rng(derive_seed(domain.spec().seed, "episode", episode_seed));
  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.q_per_class = q_per_class;
  const auto chosen =
      rng.choose(domain.class_count(), static_cast<std::size_t>(n_way));
  ep.class_map.reserve(chosen.size());
  for (std::size_t c : chosen) ep.class_map.push_back(domain.spec().class_ids[c]);
  ep.support.reserve(static_cast<std::size_t>(n_way) * k_shot);
  ep.query.reserve(static_cast<std::size_t>(n_way) * q_per_class);
  for (int n = 0; n < n_way; ++n) {
    const std::size_t cls = chosen[static_cast<std::size_t>(n)];
    for (int k = 0; k < k_shot; ++k) {
      ep.support.push_back({domain.sample_instance(cls, rng), n});
    }
    for (int q = 0; q < q_per_class; ++q) {
      ep.query.push_back({domain.sample_instance(cls, rng), n});
    }
  }
  return ep;
}

// ------------------------------------------------------------------- IO --

namespace {

constexpr int kEpisodeFormatVersion = 1;

void append_vec(std::string& out, const std::vector<double>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  out += ']';
}

void append_entries(std::string& out, const std::vector<LabeledVec>& entries) {
  out += '[';
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i) out += ',';
    out += '[';
    append_vec(out, entries[i].x);
    out += ',';
    out += std::to_string(entries[i].label);
    out += ']';
  }
  out += ']';
}

std::vector<LabeledVec> parse_entries(const nlohmann::json& j,
                                      const std::string& where) {
  if (!j.is_array()) throw IoError(where + ": expected an array of entries");
  std::vector<LabeledVec> out;
  out.reserve(j.size());
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_array() ||
        !e[1].is_number_integer()) {
      throw IoError(where + ": entry must be [[vector...], label]");
    }
    LabeledVec lv;
    lv.x.reserve(e[0].size());
    for (const auto& x : e[0]) {
      if (!x.is_number()) throw IoError(where + ": non-numeric coordinate");
      lv.x.push_back(x.get<double>());
    }
    lv.label = e[1].get<int>();
    out.push_back(std::move(lv));
  }
  return out;
}

}  // namespace

void write_episodes(const std::filesystem::path& path,
                    std::span<const Episode> episodes, std::size_t input_dim) {
  if (episodes.empty()) {
    throw ConfigError("write_episodes: no episodes to write");
  }
  const Episode& first = episodes.front();
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open episode file for writing: " + path.string());
  }
  std::string header = "{\"format_version\":" +
                       std::to_string(kEpisodeFormatVersion) +
                       ",\"input_dim\":" + std::to_string(input_dim) +
                       ",\"n_way\":" + std::to_string(first.n_way) +
                       ",\"k_shot\":" + std::to_string(first.k_shot) +
                       ",\"q_per_class\":" + std::to_string(first.q_per_class) +
                       "}\n";
  out << header;
  for (const Episode& ep : episodes) {
    std::string line = "{\"class_map\":[";
    for (std::size_t i = 0; i < ep.class_map.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(ep.class_map[i]);
    }
    line += "],\"support\":";
    append_entries(line, ep.support);
    line += ",\"query\":";
    append_entries(line, ep.query);
    line += "}\n";
    out << line;
  }
  if (!out) {
    throw IoError("failed writing episodes: " + path.string());
  }
}

std::vector<Episode> read_episodes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open episode file: " + path.string());
  }
  std::string line;
  int lineno = 0;
  auto where = [&] { return path.string() + ":" + std::to_string(lineno); };

  // Header line.
  if (!std::getline(in, line)) {
    throw IoError(path.string() + ": empty file, missing header");
  }
  ++lineno;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(where() + ": header parse error: " + e.what());
  }
  if (header.value("format_version", -1) != kEpisodeFormatVersion) {
    throw IoError(where() + ": unsupported or missing format_version");
  }
  const auto input_dim = header.value("input_dim", std::size_t{0});
  const int n_way = header.value("n_way", 0);
  const int k_shot = header.value("k_shot", 0);
  const int q_per_class = header.value("q_per_class", 0);
  if (input_dim == 0 || n_way <= 0 || k_shot <= 0 || q_per_class <= 0) {
    throw IoError(where() + ": header fields missing or non-positive");
  }

  std::vector<Episode> episodes;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError(where() + ": parse error: " + e.what());
    }
    Episode ep;
    ep.n_way = n_way;
    ep.k_shot = k_shot;
    ep.q_per_class = q_per_class;
    if (!j.contains("class_map") || !j["class_map"].is_array()) {
      throw IoError(where() + ": missing class_map");
    }
    for (const auto& c : j["class_map"]) ep.class_map.push_back(c.get<int>());
    ep.support = parse_entries(j["support"], where());
    ep.query = parse_entries(j["query"], where());
    try {
      ep.validate(input_dim);
    } catch (const DimensionError& e) {
      throw IoError(where() + ": " + e.what());
    }
    episodes.push_back(std::move(ep));
  }
  if (episodes.empty()) {
    throw IoError(path.string() + ": no episodes in file");
  }
  return episodes;
}

// ------------------------------------------------------------ benchmark --

namespace {

// Orthonormal basis from a seeded Gaussian matrix (modified Gram-Schmidt).
std::vector<double> random_rotation(std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> rows(dim, std::vector<double>(dim));
  for (auto& r : rows) {
    for (double& v : r) v = rng.normal();
  }
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += rows[i][k] * rows[j][k];
      for (std::size_t k = 0; k < dim; ++k) rows[i][k] -= dot * rows[j][k];
    }
    double norm = 0.0;
    for (double v : rows[i]) norm += v * v;
    norm = std::sqrt(norm);
    // A seeded Gaussian matrix is full rank for any practical purpose.
    for (double& v : rows[i]) v /= norm;
  }
  std::vector<double> flat(dim * dim);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) flat[i * dim + j] = rows[i][j];
  }
  return flat;
}

DomainSpec make_domain_spec(const cfg::RunConfig& c, bool target) {
  const std::size_t dim = c.data.input_dim;
  const int count = target ? c.data.target_classes : c.data.source_classes;
  const int id_base = target ? c.data.source_classes : 0;
  DomainSpec spec;
  spec.name = target ? "target" : "source";
  spec.input_dim = dim;
  spec.seed = derive_seed(c.seed, "domain-seed", target ? 1 : 0);
  for (int i = 0; i < count; ++i) {
    const int gid = id_base + i;
    spec.class_ids.push_back(gid);
    Rng rng(derive_seed(c.seed, "class", static_cast<std::uint64_t>(gid)));
    std::vector<double> mean(dim);
    for (double& v : mean) v = c.data.mean_spread * rng.normal();
    spec.class_means.push_back(std::move(mean));
    spec.class_scales.push_back(
        rng.uniform(c.data.class_scale_min, c.data.class_scale_max));
  }
  if (target) {
    Rng rng(derive_seed(c.seed, "target-transform", 0));
    AffineTransform t;
    std::vector<double> rot;
    if (c.data.target_rotation) rot = random_rotation(dim, rng);
    // Anisotropic scaling folded into the matrix: M = R * diag(s).
    std::vector<double> scales(dim);
    for (double& s : scales) {
      s = rng.uniform(c.data.target_scale_min, c.data.target_scale_max);
    }
    t.matrix.assign(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double r = rot.empty() ? (i == j ? 1.0 : 0.0) : rot[i * dim + j];
        t.matrix[i * dim + j] = r * scales[j];
      }
    }
    if (c.data.target_offset_spread > 0.0) {
      t.offset.resize(dim);
      for (double& v : t.offset) {
        v = c.data.target_offset_spread * rng.normal();
      }
    }
    t.tanh_nonlinearity = c.data.target_tanh;
    spec.transform = std::move(t);
  }
  return spec;
}

}  // namespace

Benchmark make_benchmark(const cfg::RunConfig& c) {
  return Benchmark{Domain(make_domain_spec(c, false)),
                   Domain(make_domain_spec(c, true))};
}

}  // namespace protoadapt::data
