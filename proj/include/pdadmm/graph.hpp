// Copyright 2026 The pdadmm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdadmm/core.hpp"

namespace pdadmm {

/// A node-classification dataset: undirected unweighted graph, dense node
/// features, integer labels and disjoint train/test index sets.
struct Graph {
  Index num_nodes = 0;
  Index num_features = 0;
  Index num_classes = 0;
  SpMatrix adjacency;    // binary, symmetric, zero diagonal
  Matrix features;       // num_nodes x num_features, one row per node
  IntVector labels;      // num_nodes, values in [0, num_classes)
  std::vector<Index> train_mask;
  std::vector<Index> test_mask;
};

/// Multi-hop feature concatenation [X | A_hat X | ... | A_hat^{K-1} X].
struct AugmentedFeatures {
  Matrix matrix;  // num_nodes x (K * num_features)
  Index hop_count = 0;
};

namespace detail {

inline std::runtime_error parse_error(const std::string& file, Index line,
                                      const std::string& what) {
  return std::runtime_error(file + ":" + std::to_string(line) + ": " + what);
}

inline std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

inline double parse_double_field(const std::string& field, const std::string& file,
                                 Index line) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw parse_error(file, line, "expected a number, got '" + field + "'");
  return v;
}

inline long parse_long_field(const std::string& field, const std::string& file,
                             Index line) {
  long v = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw parse_error(file, line, "expected an integer, got '" + field + "'");
  return v;
}

}  // namespace detail

/// Loads a dataset directory: meta.json, features.csv, edges.tsv, labels.csv,
/// splits.json. Edges are symmetrized, duplicates and self-loops dropped with
/// a note on stderr.
inline Graph load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  for (const char* name : {"meta.json", "features.csv", "edges.tsv", "labels.csv",
                           "splits.json"}) {
    if (!fs::exists(root / name))
      throw std::runtime_error("dataset is missing " + (root / name).string());
  }

  Graph g;
  {
    auto in = detail::open_or_throw(root / "meta.json");
    nlohmann::json meta = nlohmann::json::parse(in);
    g.num_nodes = meta.at("num_nodes").get<Index>();
    g.num_features = meta.at("num_features").get<Index>();
    g.num_classes = meta.at("num_classes").get<Index>();
    if (g.num_nodes < 1 || g.num_features < 1 || g.num_classes < 1)
      throw std::runtime_error("meta.json: counts must be positive");
  }

  {
    const std::string file = (root / "features.csv").string();
    auto in = detail::open_or_throw(root / "features.csv");
    g.features.resize(g.num_nodes, g.num_features);
    std::string line;
    for (Index i = 0; i < g.num_nodes; ++i) {
      if (!std::getline(in, line))
        throw detail::parse_error(file, i + 1, "unexpected end of file");
      std::stringstream row(line);
      std::string field;
      for (Index j = 0; j < g.num_features; ++j) {
        if (!std::getline(row, field, ','))
          throw detail::parse_error(file, i + 1, "row has too few columns");
        g.features(i, j) = detail::parse_double_field(field, file, i + 1);
      }
      if (std::getline(row, field, ','))
        throw detail::parse_error(file, i + 1, "row has too many columns");
    }
  }

  {
    const std::string file = (root / "edges.tsv").string();
    auto in = detail::open_or_throw(root / "edges.tsv");
    std::set<std::pair<Index, Index>> edges;
    Index dropped_self = 0, dropped_dup = 0;
    std::string line;
    Index lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw detail::parse_error(file, lineno, "expected 'src<TAB>dst'");
      Index src = detail::parse_long_field(line.substr(0, tab), file, lineno);
      Index dst = detail::parse_long_field(line.substr(tab + 1), file, lineno);
      if (src < 0 || src >= g.num_nodes || dst < 0 || dst >= g.num_nodes)
        throw detail::parse_error(file, lineno, "node index out of range");
      if (src == dst) {
        ++dropped_self;
        continue;
      }
      auto e = std::minmax(src, dst);
      if (!edges.emplace(e.first, e.second).second) ++dropped_dup;
    }
    if (dropped_self || dropped_dup)
      std::clog << "load_dataset: dropped " << dropped_self << " self-loop(s) and "
                << dropped_dup << " duplicate edge(s)\n";
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(edges.size() * 2);
    for (auto [a, b] : edges) {
      trips.emplace_back(a, b, 1.0);
      trips.emplace_back(b, a, 1.0);
    }
    g.adjacency.resize(g.num_nodes, g.num_nodes);
    g.adjacency.setFromTriplets(trips.begin(), trips.end());
  }

  {
    const std::string file = (root / "labels.csv").string();
    auto in = detail::open_or_throw(root / "labels.csv");
    g.labels.resize(g.num_nodes);
    std::string line;
    for (Index i = 0; i < g.num_nodes; ++i) {
      if (!std::getline(in, line))
        throw detail::parse_error(file, i + 1, "unexpected end of file");
      long v = detail::parse_long_field(line, file, i + 1);
      if (v < 0 || v >= g.num_classes)
        throw detail::parse_error(file, i + 1, "label out of range");
      g.labels[i] = static_cast<int>(v);
    }
  }

  {
    auto in = detail::open_or_throw(root / "splits.json");
    nlohmann::json splits = nlohmann::json::parse(in);
    g.train_mask = splits.at("train").get<std::vector<Index>>();
    g.test_mask = splits.at("test").get<std::vector<Index>>();
    std::set<Index> train_set(g.train_mask.begin(), g.train_mask.end());
    for (Index i : g.train_mask)
      if (i < 0 || i >= g.num_nodes)
        throw std::runtime_error("splits.json: train index out of range");
    for (Index i : g.test_mask) {
      if (i < 0 || i >= g.num_nodes)
        throw std::runtime_error("splits.json: test index out of range");
      if (train_set.count(i))
        throw std::runtime_error("splits.json: train and test masks overlap");
    }
  }

  return g;
}

/// Writes a Graph back out in the dataset directory format. Numbers use the
/// shortest round-trip decimal form, so save -> load is bit-exact.
inline void save_dataset(const Graph& g, const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root);

  {
    std::ofstream out(root / "meta.json");
    nlohmann::json meta{{"num_nodes", g.num_nodes},
                        {"num_features", g.num_features},
                        {"num_classes", g.num_classes}};
    out << meta.dump() << "\n";
  }
  {
    std::ofstream out(root / "features.csv");
    for (Index i = 0; i < g.num_nodes; ++i) {
      for (Index j = 0; j < g.num_features; ++j) {
        if (j) out << ',';
        out << format_double(g.features(i, j));
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(root / "edges.tsv");
    for (Index col = 0; col < g.adjacency.outerSize(); ++col)
      for (SpMatrix::InnerIterator it(g.adjacency, col); it; ++it)
        if (it.row() < it.col()) out << it.row() << '\t' << it.col() << '\n';
  }
  {
    std::ofstream out(root / "labels.csv");
    for (Index i = 0; i < g.num_nodes; ++i) out << g.labels[i] << '\n';
  }
  {
    std::ofstream out(root / "splits.json");
    nlohmann::json splits{{"train", g.train_mask}, {"test", g.test_mask}};
    out << splits.dump() << "\n";
  }
}

/// Symmetric normalization with self-loops:
///   A_hat = D^{-1/2} (A + I) D^{-1/2},  D = diag(rowsum(A + I)).
/// Spectral radius is at most 1; isolated nodes map to an identity row.
inline SpMatrix normalize_adjacency(const Graph& g) {
  const Index n = g.num_nodes;
  SpMatrix with_loops = g.adjacency;
  SpMatrix eye(n, n);
  eye.setIdentity();
  with_loops = with_loops + eye;

  Vector inv_sqrt_deg(n);
  for (Index i = 0; i < n; ++i) inv_sqrt_deg[i] = 0.0;
  for (Index col = 0; col < with_loops.outerSize(); ++col)
    for (SpMatrix::InnerIterator it(with_loops, col); it; ++it)
      inv_sqrt_deg[it.row()] += it.value();
  for (Index i = 0; i < n; ++i) inv_sqrt_deg[i] = 1.0 / std::sqrt(inv_sqrt_deg[i]);

  SpMatrix norm = with_loops;
  for (Index col = 0; col < norm.outerSize(); ++col)
    for (SpMatrix::InnerIterator it(norm, col); it; ++it)
      it.valueRef() = it.value() * inv_sqrt_deg[it.row()] * inv_sqrt_deg[it.col()];
  return norm;
}

/// Concatenates K hop blocks [A_hat^0 X | ... | A_hat^{K-1} X], each hop
/// computed by one sparse-dense product on the previous hop.
inline AugmentedFeatures augment_features(const Graph& g, Index hops) {
  if (hops < 1) throw std::invalid_argument("augment_features: hops must be >= 1");
  AugmentedFeatures out;
  out.hop_count = hops;
  out.matrix.resize(g.num_nodes, hops * g.num_features);
  const SpMatrix norm = normalize_adjacency(g);
  Matrix hop = g.features;
  out.matrix.leftCols(g.num_features) = hop;
  for (Index k = 1; k < hops; ++k) {
    hop = norm * hop;
    out.matrix.middleCols(k * g.num_features, g.num_features) = hop;
  }
  return out;
}

}  // namespace pdadmm
