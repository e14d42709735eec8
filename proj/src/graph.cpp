// Copyright 2026 The sfgda Authors.
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

#include "sfgda/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "sfgda/errors.hpp"

namespace sfgda {

void TargetGraph::validate() const {
  if (features.rows() != n)
    throw ContractError("TargetGraph: " + std::to_string(features.rows()) +
                        " feature rows for " + std::to_string(n) + " nodes");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const Edge& e : edges) {
    if (e.u >= n || e.v >= n) throw ContractError("TargetGraph: edge endpoint out of range");
    if (e.u == e.v) throw ContractError("TargetGraph: self-loop on node " + std::to_string(e.u));
    if (e.u > e.v) throw ContractError("TargetGraph: edge endpoints not in canonical order");
    if (!seen.emplace(e.u, e.v).second)
      throw ContractError("TargetGraph: duplicate edge " + std::to_string(e.u) + "-" +
                          std::to_string(e.v));
  }
  if (labels) {
    if (labels->size() != n)
      throw ContractError("TargetGraph: " + std::to_string(labels->size()) + " labels for " +
                          std::to_string(n) + " nodes");
    for (std::size_t y : *labels)
      if (y >= num_classes) throw ContractError("TargetGraph: label outside [0, C)");
  }
}

void ShiftSpec::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (nodes_per_class == 0 || num_classes == 0 || feature_dim == 0)
    throw ContractError("ShiftSpec: counts must be positive");
  if (!prob(intra_p) || !prob(inter_p))
    throw ContractError("ShiftSpec: edge probabilities must lie in [0, 1]");
  if (!(edge_noise >= 0.0 && edge_noise < 1.0))
    throw ContractError("ShiftSpec: edge_noise must lie in [0, 1)");
  if (!(feature_std >= 0.0) || !std::isfinite(class_mean_separation) ||
      !std::isfinite(target_mean_shift))
    throw ContractError("ShiftSpec: invalid feature distribution parameters");
}

GcnPattern build_gcn_pattern(const TargetGraph& g) {
  std::vector<std::size_t> rows, cols;
  std::vector<double> edge_ids;
  rows.reserve(g.n + 2 * g.edges.size());
  cols.reserve(rows.capacity());
  edge_ids.reserve(rows.capacity());
  for (std::size_t i = 0; i < g.n; ++i) {
    rows.push_back(i);
    cols.push_back(i);
    edge_ids.push_back(-1.0);
  }
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const Edge& ed = g.edges[e];
    rows.push_back(ed.u);
    cols.push_back(ed.v);
    edge_ids.push_back(static_cast<double>(e));
    rows.push_back(ed.v);
    cols.push_back(ed.u);
    edge_ids.push_back(static_cast<double>(e));
  }
  GcnPattern pattern;
  // The triplet builder carries the edge id through the sort in the value slot.
  pattern.structure = sparse_from_triplets(g.n, std::move(rows), std::move(cols), std::move(edge_ids));
  pattern.entry_edge.resize(pattern.structure.nnz());
  for (std::size_t k = 0; k < pattern.structure.nnz(); ++k) {
    pattern.entry_edge[k] = static_cast<std::ptrdiff_t>(pattern.structure.values[k]);
    pattern.structure.values[k] = 1.0;
  }
  pattern.num_edges = g.edges.size();
  return pattern;
}

namespace {

void check_edge_weights(const GcnPattern& pattern, std::span<const double> w) {
  if (w.size() != pattern.num_edges)
    throw ContractError("edge weights: expected " + std::to_string(pattern.num_edges) +
                        " values, got " + std::to_string(w.size()));
  for (double v : w)
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("edge weights must lie in [0, 1]");
}

// Weighted degree plus the self-loop.
std::vector<double> renormalized_degrees(const GcnPattern& pattern, std::span<const double> w) {
  const SparseAdjacency& s = pattern.structure;
  std::vector<double> deg(s.n, 1.0);
  for (std::size_t i = 0; i < s.n; ++i)
    for (std::size_t k = s.row_offsets[i]; k < s.row_offsets[i + 1]; ++k)
      if (pattern.entry_edge[k] >= 0) deg[i] += w[pattern.entry_edge[k]];
  return deg;
}

std::vector<double> normalized_from_degrees(const GcnPattern& pattern, std::span<const double> w,
                                            const std::vector<double>& deg) {
  const SparseAdjacency& s = pattern.structure;
  std::vector<double> values(s.nnz());
  for (std::size_t i = 0; i < s.n; ++i) {
    for (std::size_t k = s.row_offsets[i]; k < s.row_offsets[i + 1]; ++k) {
      const std::size_t j = s.col_indices[k];
      const std::ptrdiff_t e = pattern.entry_edge[k];
      const double weight = e >= 0 ? w[e] : 1.0;
      values[k] = weight / std::sqrt(deg[i] * deg[j]);
    }
  }
  return values;
}

}  // namespace

std::vector<double> gcn_normalized_values(const GcnPattern& pattern,
                                          std::span<const double> edge_weights) {
  check_edge_weights(pattern, edge_weights);
  return normalized_from_degrees(pattern, edge_weights, renormalized_degrees(pattern, edge_weights));
}

ad::Var gcn_normalized_values(const GcnPattern& pattern, ad::Var edge_weights) {
  const Matrix& w = edge_weights.value();
  if (w.cols() != 1 || w.rows() != pattern.num_edges)
    throw ShapeError("gcn_normalized_values: edge weights " + w.shape_string() +
                     " do not match " + std::to_string(pattern.num_edges) + " edges");
  check_edge_weights(pattern, w.data());
  std::vector<double> deg = renormalized_degrees(pattern, w.data());
  std::vector<double> values = normalized_from_degrees(pattern, w.data(), deg);
  const std::size_t nnz = values.size();
  return edge_weights.tape->record(
      Matrix(nnz, 1, std::move(values)), {edge_weights.id},
      [pattern, deg = std::move(deg), w_id = edge_weights.id](ad::Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& v = t.value(self);
        const SparseAdjacency& s = pattern.structure;
        Matrix& gw = t.grad_buffer(w_id);
        // Every entry (i, j) = w / sqrt(d_i d_j) depends on both endpoint degrees.
        std::vector<double> g_deg(s.n, 0.0);
        for (std::size_t i = 0; i < s.n; ++i) {
          for (std::size_t k = s.row_offsets[i]; k < s.row_offsets[i + 1]; ++k) {
            const std::size_t j = s.col_indices[k];
            const double gk = g(k, 0);
            const double vk = v(k, 0);
            g_deg[i] -= 0.5 * gk * vk / deg[i];
            g_deg[j] -= 0.5 * gk * vk / deg[j];
            const std::ptrdiff_t e = pattern.entry_edge[k];
            if (e >= 0) gw(e, 0) += gk / std::sqrt(deg[i] * deg[j]);
          }
        }
        for (std::size_t i = 0; i < s.n; ++i)
          for (std::size_t k = s.row_offsets[i]; k < s.row_offsets[i + 1]; ++k) {
            const std::ptrdiff_t e = pattern.entry_edge[k];
            // Entry (i, j) of edge e: d_i grows by w_e, so each endpoint sees it once.
            if (e >= 0) gw(e, 0) += g_deg[i];
          }
      });
}

SparseAdjacency normalize_adjacency(const TargetGraph& g,
                                    std::optional<std::span<const double>> edge_weights) {
  GcnPattern pattern = build_gcn_pattern(g);
  std::vector<double> ones;
  std::span<const double> w;
  if (edge_weights) {
    w = *edge_weights;
  } else {
    ones.assign(g.edges.size(), 1.0);
    w = ones;
  }
  std::vector<double> values = gcn_normalized_values(pattern, w);
  SparseAdjacency adj = std::move(pattern.structure);
  adj.values = std::move(values);
  return adj;
}

SparseAdjacency weighted_neighborhoods(const TargetGraph& g,
                                       std::optional<std::span<const double>> edge_weights) {
  if (edge_weights && edge_weights->size() != g.edges.size())
    throw ContractError("weighted_neighborhoods: weight count does not match edges");
  std::vector<std::size_t> rows, cols;
  std::vector<double> vals;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const double w = edge_weights ? (*edge_weights)[e] : 1.0;
    rows.push_back(g.edges[e].u);
    cols.push_back(g.edges[e].v);
    vals.push_back(w);
    rows.push_back(g.edges[e].v);
    cols.push_back(g.edges[e].u);
    vals.push_back(w);
  }
  return sparse_from_triplets(g.n, std::move(rows), std::move(cols), std::move(vals));
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  std::filesystem::path p = prefix;
  p += suffix;
  return p;
}

namespace {

struct LineReader {
  explicit LineReader(const std::filesystem::path& path) : path_(path), in_(path) {
    if (!in_) throw IoError("cannot open " + path.string());
  }

  // Next non-blank line split into tokens; false at end of file.
  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      std::istringstream ss(line);
      tokens.clear();
      std::string tok;
      while (ss >> tok) tokens.push_back(tok);
      if (!tokens.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path_.string() + ":" + std::to_string(line_no_) + ": " + what);
  }

  std::size_t parse_index(const std::string& tok) const {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) fail("expected a non-negative integer, got '" + tok + "'");
    return v;
  }

  double parse_real(const std::string& tok) const {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
      fail("expected a finite real, got '" + tok + "'");
    return v;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

TargetGraph load_graph(const std::filesystem::path& prefix) {
  TargetGraph g;
  std::vector<std::string> tok;
  std::size_t d = 0;
  {
    LineReader meta(with_suffix(prefix, ".meta"));
    if (!meta.next(tok) || tok.size() != 3) meta.fail("expected 'n d C'");
    g.n = meta.parse_index(tok[0]);
    d = meta.parse_index(tok[1]);
    g.num_classes = meta.parse_index(tok[2]);
  }
  {
    LineReader edges(with_suffix(prefix, ".edges"));
    std::set<std::pair<std::size_t, std::size_t>> directed;
    std::set<std::pair<std::size_t, std::size_t>> undirected;
    bool symmetrized = false;
    while (edges.next(tok)) {
      if (tok.size() != 2) edges.fail("expected 'i j'");
      const std::size_t i = edges.parse_index(tok[0]);
      const std::size_t j = edges.parse_index(tok[1]);
      if (i == j) edges.fail("self-loop " + tok[0] + " " + tok[1]);
      if (i >= g.n || j >= g.n)
        throw ContractError(with_suffix(prefix, ".edges").string() + ": endpoint exceeds n=" +
                            std::to_string(g.n));
      if (!directed.emplace(i, j).second) edges.fail("duplicate edge " + tok[0] + " " + tok[1]);
      const auto key = std::minmax(i, j);
      if (!undirected.emplace(key.first, key.second).second) {
        symmetrized = true;
        continue;
      }
      g.edges.push_back({key.first, key.second});
    }
    if (symmetrized)
      std::cerr << "warning: " << prefix.string()
                << ": directed edge pairs merged into undirected edges\n";
  }
  {
    LineReader feat(with_suffix(prefix, ".feat"));
    std::vector<double> data;
    data.reserve(g.n * d);
    std::size_t rows = 0;
    while (feat.next(tok)) {
      if (tok.size() != d)
        feat.fail("expected " + std::to_string(d) + " values, got " + std::to_string(tok.size()));
      for (const auto& t : tok) data.push_back(feat.parse_real(t));
      ++rows;
    }
    if (rows != g.n)
      throw ContractError(with_suffix(prefix, ".feat").string() + ": " + std::to_string(rows) +
                          " feature rows but header says n=" + std::to_string(g.n));
    g.features = Matrix(g.n, d, std::move(data));
  }
  const auto label_path = with_suffix(prefix, ".labels");
  if (std::filesystem::exists(label_path)) {
    LineReader lab(label_path);
    std::vector<std::size_t> labels;
    while (lab.next(tok)) {
      if (tok.size() != 1) lab.fail("expected one label per line");
      const std::size_t y = lab.parse_index(tok[0]);
      if (y >= g.num_classes) lab.fail("label " + tok[0] + " outside [0, C)");
      labels.push_back(y);
    }
    if (labels.size() != g.n)
      throw ContractError(label_path.string() + ": " + std::to_string(labels.size()) +
                          " labels but header says n=" + std::to_string(g.n));
    g.labels = std::move(labels);
  }
  g.validate();
  return g;
}

void save_graph(const TargetGraph& g, const std::filesystem::path& prefix) {
  g.validate();
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  auto open = [&](const char* suffix) {
    std::ofstream out(with_suffix(prefix, suffix));
    if (!out) throw IoError("cannot write " + with_suffix(prefix, suffix).string());
    return out;
  };
  {
    auto out = open(".meta");
    out << g.n << ' ' << g.feature_dim() << ' ' << g.num_classes << '\n';
  }
  {
    auto out = open(".edges");
    for (const Edge& e : g.edges) out << e.u << ' ' << e.v << '\n';
  }
  {
    auto out = open(".feat");
    for (std::size_t i = 0; i < g.n; ++i) {
      auto row = g.features.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) out << (j ? " " : "") << format_real(row[j]);
      out << '\n';
    }
  }
  if (g.labels) {
    auto out = open(".labels");
    for (std::size_t y : *g.labels) out << y << '\n';
  }
}

SplitMask split_nodes(const TargetGraph& g, std::uint64_t seed) {
  if (!g.has_labels()) throw ContractError("split_nodes: graph has no labels");
  std::vector<std::size_t> perm(g.n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(g.n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(g.n)));
  SplitMask split;
  split.train.assign(perm.begin(), perm.begin() + n_train);
  split.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  split.test.assign(perm.begin() + n_train + n_val, perm.end());
  return split;
}

namespace {

// Orthonormal directions (Gram-Schmidt on Gaussian draws); falls back to plain
// unit vectors when there are more classes than dimensions.
std::vector<std::vector<double>> class_directions(std::size_t c, std::size_t d,
                                                  std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> v(d);
    for (double& x : v) x = normal(rng);
    if (k < d)
      for (const auto& u : dirs) {
        const double proj = dot(v, u);
        for (std::size_t j = 0; j < d; ++j) v[j] -= proj * u[j];
      }
    const double norm = l2_norm(v);
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

std::vector<Edge> block_model_edges(const std::vector<std::size_t>& labels, double intra_p,
                                    double inter_p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size(); ++j)
      if (unif(rng) < (labels[i] == labels[j] ? intra_p : inter_p)) edges.push_back({i, j});
  return edges;
}

Matrix sample_features(const std::vector<std::size_t>& labels,
                       const std::vector<std::vector<double>>& means,
                       const std::vector<double>& offset, double std_dev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = offset.size();
  Matrix x(labels.size(), d);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      x(i, j) = means[labels[i]][j] + offset[j] + std_dev * normal(rng);
  return x;
}

void rewire(std::vector<Edge>& edges, std::size_t n, double fraction, std::mt19937_64& rng) {
  if (edges.empty() || fraction <= 0.0 || n < 3) return;
  std::set<std::pair<std::size_t, std::size_t>> present;
  for (const Edge& e : edges) present.emplace(e.u, e.v);
  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(edges.size())));
  std::uniform_int_distribution<std::size_t> node(0, n - 1);
  for (std::size_t r = 0; r < count; ++r) {
    Edge& e = edges[order[r]];
    // Keep endpoint u, redirect the other end to a fresh random node.
    for (int attempt = 0; attempt < 64; ++attempt) {
      const std::size_t w = node(rng);
      if (w == e.u) continue;
      const auto key = std::minmax(e.u, w);
      if (present.count({key.first, key.second})) continue;
      present.erase({e.u, e.v});
      present.emplace(key.first, key.second);
      e = {key.first, key.second};
      break;
    }
  }
  std::sort(edges.begin(), edges.end(),
            [](const Edge& a, const Edge& b) { return a.u != b.u ? a.u < b.u : a.v < b.v; });
}

}  // namespace

std::pair<TargetGraph, TargetGraph> make_shift_pair(const ShiftSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t c = spec.num_classes;
  const std::size_t d = spec.feature_dim;
  const std::size_t n = c * spec.nodes_per_class;

  // Orthonormal directions scaled so that distinct means sit `separation` apart.
  auto means = class_directions(c, d, rng);
  for (auto& m : means)
    for (double& x : m) x *= spec.class_mean_separation / std::sqrt(2.0);

  // Shift direction: isotropic random unit vector.
  std::vector<double> shift(d, 0.0);
  {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : shift) x = normal(rng);
    const double norm = l2_norm(shift);
    for (double& x : shift) x *= spec.target_mean_shift / norm;
  }

  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i / spec.nodes_per_class;

  auto build = [&](const std::vector<double>& offset, double noise) {
    TargetGraph g;
    g.n = n;
    g.num_classes = c;
    g.edges = block_model_edges(labels, spec.intra_p, spec.inter_p, rng);
    rewire(g.edges, n, noise, rng);
    g.features = sample_features(labels, means, offset, spec.feature_std, rng);
    g.labels = labels;
    g.validate();
    return g;
  };
  TargetGraph source = build(std::vector<double>(d, 0.0), 0.0);
  TargetGraph target = build(shift, spec.edge_noise);
  return {std::move(source), std::move(target)};
}

}  // namespace sfgda
