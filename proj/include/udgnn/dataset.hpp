#pragma once

// Node-classification datasets: validation, synthetic generators, and the
// portable JSON file format.
//
// File format (UTF-8 JSON object; writers emit keys in this order, readers
// accept any order):
//   n          int
//   edges      [[u, v], ...]   each undirected edge once, u < v
//   features   [[x_0, ..., x_{d-1}], ...]   N rows
//   labels     [y_0, ..., y_{N-1}]
//   splits     {"train": [...], "val": [...], "test": [...]}   node indices
//   n_classes  int

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "udgnn/graph.hpp"
#include "udgnn/rng.hpp"
#include "udgnn/tensor.hpp"

namespace udgnn {

using Mask = std::vector<std::uint8_t>;

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<std::size_t> mask_indices(const Mask& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) out.push_back(i);
  return out;
}

inline std::size_t mask_count(const Mask& m) {
  std::size_t c = 0;
  for (auto b : m) c += b ? 1 : 0;
  return c;
}

struct NodeDataset {
  Tensor features;
  std::vector<int> labels;
  Mask train_mask;
  Mask val_mask;
  Mask test_mask;
  int n_classes = 0;

  std::size_t n_nodes() const { return labels.size(); }
  bool operator==(const NodeDataset&) const = default;
};

/// Throws DatasetError naming the first violated invariant.
inline void validate(const SparseGraph& g, const NodeDataset& ds) {
  const std::size_t n = ds.labels.size();
  if (g.n_nodes() != n)
    throw DatasetError("graph has " + std::to_string(g.n_nodes()) + " nodes but dataset has " + std::to_string(n) +
                       " labels");
  if (ds.features.rows() != n)
    throw DatasetError("feature matrix has " + std::to_string(ds.features.rows()) + " rows, expected " +
                       std::to_string(n));
  if (ds.n_classes < 1) throw DatasetError("n_classes must be positive");
  if (ds.train_mask.size() != n || ds.val_mask.size() != n || ds.test_mask.size() != n)
    throw DatasetError("mask length does not match node count");
  for (std::size_t i = 0; i < n; ++i) {
    const int masked = ds.train_mask[i] + ds.val_mask[i] + ds.test_mask[i];
    if (masked > 1) throw DatasetError("mask overlap: node " + std::to_string(i) + " is in more than one split");
    if (ds.labels[i] < 0 || ds.labels[i] >= ds.n_classes)
      throw DatasetError("label " + std::to_string(ds.labels[i]) + " of node " + std::to_string(i) +
                         " outside [0, " + std::to_string(ds.n_classes) + ")");
  }
  if (!all_finite(ds.features)) throw DatasetError("feature matrix contains non-finite entries");
}

/// Fraction of edges whose endpoints share a label.
inline double edge_homophily(const SparseGraph& g, const std::vector<int>& labels) {
  std::size_t same = 0, total = 0;
  for (const auto& [u, v] : g.edge_list()) {
    ++total;
    same += labels[u] == labels[v] ? 1 : 0;
  }
  return total ? static_cast<double>(same) / static_cast<double>(total) : 0.0;
}

enum class GeneratorKind { PlantedPartition, NoisyComplete };

struct SyntheticSpec {
  GeneratorKind generator = GeneratorKind::PlantedPartition;
  std::size_t n_nodes = 400;
  int n_classes = 4;
  std::size_t feature_dim = 16;
  double homophily = 0.75;
  double mean_degree = 10.0;
  double feature_signal = 1.0;
  double noise_std = 1.0;
  double split_train = 0.48;
  double split_val = 0.32;
  double split_test = 0.20;
  std::uint64_t seed = 0;
};

inline void validate(const SyntheticSpec& s) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("SyntheticSpec." + field + ": " + why);
  };
  if (s.n_nodes < 2) fail("n_nodes", "must be at least 2");
  if (s.n_classes < 1) fail("n_classes", "must be positive");
  if (s.feature_dim < static_cast<std::size_t>(s.n_classes))
    fail("feature_dim", "must be >= n_classes (one orthogonal mean direction per class)");
  if (!(s.homophily >= 0.0 && s.homophily <= 1.0)) fail("homophily", "must lie in [0, 1]");
  if (!(s.mean_degree >= 0.0)) fail("mean_degree", "must be non-negative");
  if (!(s.feature_signal >= 0.0)) fail("feature_signal", "must be non-negative");
  if (!(s.noise_std > 0.0)) fail("noise_std", "must be positive");
  if (!(s.split_train > 0.0 && s.split_val > 0.0 && s.split_test > 0.0))
    fail("split_fractions", "all fractions must be positive");
  if (s.split_train + s.split_val + s.split_test > 1.0 + 1e-12) fail("split_fractions", "must sum to at most 1");
}

/// Edge probabilities the planted-partition generator uses for given labels.
struct PlantedPartitionParams {
  double p_intra = 0.0;
  double p_inter = 0.0;
  double intra_pairs = 0.0;
  double inter_pairs = 0.0;
  double expected_edges() const { return p_intra * intra_pairs + p_inter * inter_pairs; }
  double edge_variance() const {
    return intra_pairs * p_intra * (1.0 - p_intra) + inter_pairs * p_inter * (1.0 - p_inter);
  }
};

inline PlantedPartitionParams planted_partition_params(const SyntheticSpec& spec, const std::vector<int>& labels) {
  std::vector<double> sizes(static_cast<std::size_t>(spec.n_classes), 0.0);
  for (int y : labels) sizes[static_cast<std::size_t>(y)] += 1.0;
  const double n = static_cast<double>(labels.size());
  PlantedPartitionParams p;
  for (double s : sizes) p.intra_pairs += s * (s - 1.0) / 2.0;
  p.inter_pairs = n * (n - 1.0) / 2.0 - p.intra_pairs;
  const double edges = n * spec.mean_degree / 2.0;
  const double want_intra = spec.homophily * edges;
  const double want_inter = (1.0 - spec.homophily) * edges;
  auto prob = [](double want, double pairs, const char* name) {
    if (want == 0.0) return 0.0;
    const double q = pairs > 0.0 ? want / pairs : INFINITY;
    if (q > 1.0)
      throw std::invalid_argument(std::string("infeasible spec: required ") + name + " = " + std::to_string(q) +
                                  " exceeds 1 (lower mean_degree or adjust homophily)");
    return q;
  };
  p.p_intra = prob(want_intra, p.intra_pairs, "p_intra");
  p.p_inter = prob(want_inter, p.inter_pairs, "p_inter");
  return p;
}

namespace detail {

// Stream ids of the generator's sub-generators.
enum : std::uint64_t { kLabelStream = 1, kEdgeStream = 2, kFeatureStream = 3, kSplitStream = 4 };

inline std::vector<int> draw_labels(const SyntheticSpec& s) {
  Rng rng = Rng(s.seed).split(kLabelStream);
  std::vector<int> labels(s.n_nodes);
  for (int& y : labels) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.n_classes)));
  return labels;
}

inline Tensor draw_features(const SyntheticSpec& s, const std::vector<int>& labels) {
  Rng rng = Rng(s.seed).split(kFeatureStream);
  Tensor x(s.n_nodes, s.feature_dim);
  for (std::size_t i = 0; i < s.n_nodes; ++i) {
    for (std::size_t j = 0; j < s.feature_dim; ++j) x(i, j) = rng.normal(0.0, s.noise_std);
    x(i, static_cast<std::size_t>(labels[i])) += s.feature_signal;
  }
  return x;
}

// Stratified: within each class the members are shuffled and cut by the
// rounded split fractions; leftovers stay unassigned.
inline void draw_splits(const SyntheticSpec& s, NodeDataset& ds) {
  Rng rng = Rng(s.seed).split(kSplitStream);
  const std::size_t n = s.n_nodes;
  ds.train_mask.assign(n, 0);
  ds.val_mask.assign(n, 0);
  ds.test_mask.assign(n, 0);
  for (int c = 0; c < s.n_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (ds.labels[i] == c) members.push_back(i);
    rng.shuffle(members);
    const double m = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(s.split_train * m));
    const auto n_val = std::min(members.size() - n_train, static_cast<std::size_t>(std::llround(s.split_val * m)));
    const auto n_test =
        std::min(members.size() - n_train - n_val, static_cast<std::size_t>(std::llround(s.split_test * m)));
    std::size_t k = 0;
    for (std::size_t t = 0; t < n_train; ++t) ds.train_mask[members[k++]] = 1;
    for (std::size_t t = 0; t < n_val; ++t) ds.val_mask[members[k++]] = 1;
    for (std::size_t t = 0; t < n_test; ++t) ds.test_mask[members[k++]] = 1;
  }
}

}  // namespace detail

struct GeneratedData {
  SparseGraph graph;
  NodeDataset dataset;
};

/// Random-stream order: labels, edges, features, splits, each from its own
/// child stream of Rng(spec.seed). Edges visit pairs (i<j) row-major and draw
/// one uniform per pair.
inline GeneratedData generate_planted_partition(const SyntheticSpec& spec) {
  validate(spec);
  GeneratedData out;
  auto& ds = out.dataset;
  ds.n_classes = spec.n_classes;
  ds.labels = detail::draw_labels(spec);
  const PlantedPartitionParams pp = planted_partition_params(spec, ds.labels);

  Rng rng = Rng(spec.seed).split(detail::kEdgeStream);
  std::vector<std::pair<Index, Index>> edges;
  for (std::size_t i = 0; i < spec.n_nodes; ++i)
    for (std::size_t j = i + 1; j < spec.n_nodes; ++j) {
      const double p = ds.labels[i] == ds.labels[j] ? pp.p_intra : pp.p_inter;
      if (rng.uniform() < p) edges.emplace_back(static_cast<Index>(i), static_cast<Index>(j));
    }
  out.graph = SparseGraph::from_edges(spec.n_nodes, edges);
  ds.features = detail::draw_features(spec, ds.labels);
  detail::draw_splits(spec, ds);
  return out;
}

inline constexpr std::size_t kNoisyCompleteMaxNodes = 2000;

/// Complete graph with the same label/feature/split model as the planted
/// partition generator; homophily and mean_degree are ignored.
inline GeneratedData generate_noisy_complete(const SyntheticSpec& spec) {
  validate(spec);
  if (spec.n_nodes > kNoisyCompleteMaxNodes)
    throw std::invalid_argument("SyntheticSpec.n_nodes: noisy-complete graphs are capped at " +
                                std::to_string(kNoisyCompleteMaxNodes) + " nodes");
  GeneratedData out;
  auto& ds = out.dataset;
  ds.n_classes = spec.n_classes;
  ds.labels = detail::draw_labels(spec);
  out.graph = SparseGraph::complete(spec.n_nodes);
  ds.features = detail::draw_features(spec, ds.labels);
  detail::draw_splits(spec, ds);
  return out;
}

inline GeneratedData generate(const SyntheticSpec& spec) {
  return spec.generator == GeneratorKind::NoisyComplete ? generate_noisy_complete(spec)
                                                        : generate_planted_partition(spec);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::ordered_json j;
  j["generator"] = s.generator == GeneratorKind::NoisyComplete ? "noisy_complete" : "planted_partition";
  j["n_nodes"] = s.n_nodes;
  j["n_classes"] = s.n_classes;
  j["feature_dim"] = s.feature_dim;
  j["homophily"] = s.homophily;
  j["mean_degree"] = s.mean_degree;
  j["feature_signal"] = s.feature_signal;
  j["noise_std"] = s.noise_std;
  j["split_fractions"] = {s.split_train, s.split_val, s.split_test};
  j["seed"] = s.seed;
  return j;
}

/// Missing fields keep their defaults; present fields are type-checked and the
/// result validated.
inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument(std::string("SyntheticSpec.") + key + ": wrong type");
    }
  };
  if (!j.is_object()) throw std::invalid_argument("SyntheticSpec: expected a JSON object");
  if (j.contains("generator")) {
    const std::string g = j.at("generator").get<std::string>();
    if (g == "planted_partition") s.generator = GeneratorKind::PlantedPartition;
    else if (g == "noisy_complete") s.generator = GeneratorKind::NoisyComplete;
    else throw std::invalid_argument("SyntheticSpec.generator: unknown generator '" + g + "'");
  }
  get("n_nodes", s.n_nodes);
  get("n_classes", s.n_classes);
  get("feature_dim", s.feature_dim);
  get("homophily", s.homophily);
  get("mean_degree", s.mean_degree);
  get("feature_signal", s.feature_signal);
  get("noise_std", s.noise_std);
  get("seed", s.seed);
  if (j.contains("split_fractions")) {
    const auto& f = j.at("split_fractions");
    if (!f.is_array() || f.size() != 3)
      throw std::invalid_argument("SyntheticSpec.split_fractions: expected [train, val, test]");
    s.split_train = f[0].get<double>();
    s.split_val = f[1].get<double>();
    s.split_test = f[2].get<double>();
  }
  validate(s);
  return s;
}

inline std::string dataset_to_json_string(const SparseGraph& g, const NodeDataset& ds) {
  validate(g, ds);
  nlohmann::ordered_json j;
  j["n"] = ds.n_nodes();
  auto edges = nlohmann::ordered_json::array();
  for (const auto& [u, v] : g.edge_list()) edges.push_back({u, v});
  j["edges"] = std::move(edges);
  auto feats = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ds.features.rows(); ++i) {
    const auto r = ds.features.row(i);
    feats.push_back(std::vector<double>(r.begin(), r.end()));
  }
  j["features"] = std::move(feats);
  j["labels"] = ds.labels;
  nlohmann::ordered_json splits;
  splits["train"] = mask_indices(ds.train_mask);
  splits["val"] = mask_indices(ds.val_mask);
  splits["test"] = mask_indices(ds.test_mask);
  j["splits"] = std::move(splits);
  j["n_classes"] = ds.n_classes;
  return j.dump() + "\n";
}

inline GeneratedData dataset_from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DatasetError("dataset file must contain a JSON object");
  for (const char* key : {"n", "edges", "features", "labels", "splits", "n_classes"})
    if (!j.contains(key)) throw DatasetError(std::string("missing field '") + key + "'");

  GeneratedData out;
  auto& ds = out.dataset;
  try {
    const auto n = j.at("n").get<std::size_t>();
    ds.n_classes = j.at("n_classes").get<int>();

    std::vector<std::pair<Index, Index>> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw DatasetError("each edge must be a [u, v] pair");
      const auto u = e[0].get<std::int64_t>();
      const auto v = e[1].get<std::int64_t>();
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n)
        throw DatasetError("edge [" + std::to_string(u) + "," + std::to_string(v) + "] out of range for n=" +
                           std::to_string(n));
      if (u == v) throw DatasetError("self-loop edge on node " + std::to_string(u));
      edges.emplace_back(static_cast<Index>(u), static_cast<Index>(v));
    }
    out.graph = SparseGraph::from_edges(n, edges);

    const auto& feats = j.at("features");
    if (!feats.is_array() || feats.size() != n)
      throw DatasetError("features must have " + std::to_string(n) + " rows");
    const std::size_t d = n ? feats[0].size() : 0;
    ds.features = Tensor(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      if (!feats[i].is_array() || feats[i].size() != d)
        throw DatasetError("feature row " + std::to_string(i) + " does not have " + std::to_string(d) + " entries");
      for (std::size_t k = 0; k < d; ++k) ds.features(i, k) = feats[i][k].get<double>();
    }

    ds.labels = j.at("labels").get<std::vector<int>>();
    if (ds.labels.size() != n) throw DatasetError("labels must have " + std::to_string(n) + " entries");

    const auto& splits = j.at("splits");
    auto read_mask = [&](const char* key, Mask& m) {
      m.assign(n, 0);
      if (!splits.contains(key)) throw DatasetError(std::string("splits missing '") + key + "'");
      for (const auto& v : splits.at(key)) {
        const auto idx = v.get<std::int64_t>();
        if (idx < 0 || static_cast<std::size_t>(idx) >= n)
          throw DatasetError(std::string("split '") + key + "' index " + std::to_string(idx) + " out of range");
        m[static_cast<std::size_t>(idx)] = 1;
      }
    };
    read_mask("train", ds.train_mask);
    read_mask("val", ds.val_mask);
    read_mask("test", ds.test_mask);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed dataset field: ") + e.what());
  }
  validate(out.graph, ds);
  return out;
}

inline void save_dataset(const SparseGraph& g, const NodeDataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot open '" + path + "' for writing");
  f << dataset_to_json_string(g, ds);
  if (!f) throw DatasetError("failed writing '" + path + "'");
}

inline GeneratedData load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot open dataset file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return dataset_from_json_string(ss.str());
}

}  // namespace udgnn
