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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sfgda/autodiff.hpp"
#include "sfgda/matrix.hpp"

namespace sfgda {

/// Undirected edge stored with u < v.
struct Edge {
  std::size_t u = 0;
  std::size_t v = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Node-classification graph: the unit that gets adapted.
struct TargetGraph {
  std::size_t n = 0;
  std::vector<Edge> edges;
  Matrix features;  // n x d
  std::optional<std::vector<std::size_t>> labels;
  std::size_t num_classes = 0;

  std::size_t feature_dim() const { return features.cols(); }
  bool has_labels() const { return labels.has_value(); }
  /// Throws ContractError on out-of-range endpoints, self-loops, duplicate
  /// pairs, or mismatched feature/label counts.
  void validate() const;

  friend bool operator==(const TargetGraph&, const TargetGraph&) = default;
};

/// Disjoint node-id sets for source pretraining.
struct SplitMask {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  friend bool operator==(const SplitMask&, const SplitMask&) = default;
};

/// Knobs of the synthetic two-domain generator.
///
/// Both domains are stochastic block models over the same classes. Node features
/// are Gaussian around per-class means whose pairwise distance is
/// `class_mean_separation`. The target domain additionally translates every
/// feature by `target_mean_shift` along a seeded isotropic random direction,
/// and rewires a fraction `edge_noise` of its edges to random
/// endpoints.
struct ShiftSpec {
  std::size_t nodes_per_class = 100;
  std::size_t num_classes = 3;
  double intra_p = 0.05;
  double inter_p = 0.005;
  std::size_t feature_dim = 16;
  double class_mean_separation = 2.0;
  double feature_std = 1.0;
  double target_mean_shift = 1.0;
  double edge_noise = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Sparsity pattern of A + I in CSR form together with the edge that feeds
/// each stored entry (-1 for the self-loop on the diagonal).
struct GcnPattern {
  SparseAdjacency structure;  // values are unused placeholders
  std::vector<std::ptrdiff_t> entry_edge;
  std::size_t num_edges = 0;
};

GcnPattern build_gcn_pattern(const TargetGraph& g);

/// Renormalized adjacency values D^-1/2 (A_w + I) D^-1/2 over the pattern,
/// where D is the weighted degree plus one. Weights must lie in [0, 1].
std::vector<double> gcn_normalized_values(const GcnPattern& pattern,
                                          std::span<const double> edge_weights);

/// Differentiable counterpart: edge_weights is an (edges x 1) Var, the result
/// holds one value per stored entry (nnz x 1).
ad::Var gcn_normalized_values(const GcnPattern& pattern, ad::Var edge_weights);

/// Symmetric GCN normalization. With no weights every edge has weight 1; a
/// weight of 0 is equivalent to deleting the edge.
SparseAdjacency normalize_adjacency(const TargetGraph& g,
                                    std::optional<std::span<const double>> edge_weights = {});

/// Raw weighted adjacency without self-loops, used for neighborhood aggregation.
SparseAdjacency weighted_neighborhoods(const TargetGraph& g,
                                       std::optional<std::span<const double>> edge_weights = {});

/// Loads `<prefix>.meta`, `<prefix>.edges`, `<prefix>.feat` and the optional
/// `<prefix>.labels`. Reversed duplicates of an edge are merged with a warning.
TargetGraph load_graph(const std::filesystem::path& prefix);
void save_graph(const TargetGraph& g, const std::filesystem::path& prefix);

/// Uniform random 80/10/10 split; deterministic per seed. Requires labels.
SplitMask split_nodes(const TargetGraph& g, std::uint64_t seed);

std::pair<TargetGraph, TargetGraph> make_shift_pair(const ShiftSpec& spec);

/// Appends `suffix` to the final component of a path prefix ("out/g" + ".meta").
std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix);

}  // namespace sfgda
