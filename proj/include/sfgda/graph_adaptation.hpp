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
#include <span>
#include <vector>

#include "sfgda/autodiff.hpp"
#include "sfgda/graph.hpp"
#include "sfgda/matrix.hpp"
#include "sfgda/memory_banks.hpp"

namespace sfgda {

/// Learned feature offsets and relaxed per-edge deletion mask.
///
/// The mask lives only on existing edges: edge e keeps weight 1 - delta_a[e].
/// Feasibility: every delta_a in [0, 1] and their sum at most `budget`.
struct AdaptationDeltas {
  Matrix delta_x;               // n x d
  std::vector<double> delta_a;  // one per edge, aligned with TargetGraph::edges
  double budget = 0.0;

  /// Zero deltas for g with budget = budget_fraction * |E|.
  static AdaptationDeltas zeros(const TargetGraph& g, double budget_fraction);
  bool feasible(double tol = 1e-6) const;
};

/// X' = X + delta_x.
Matrix apply_feature_delta(const Matrix& x, const AdaptationDeltas& deltas);
ad::Var apply_feature_delta(ad::Var x, ad::Var delta_x);

/// Relaxed XOR on existing edges: weight_e = 1 - delta_a[e].
std::vector<double> apply_structure_delta(const TargetGraph& g, const AdaptationDeltas& deltas);
ad::Var apply_structure_delta(ad::Var delta_a);

struct ConfidentSet {
  std::vector<std::size_t> nodes;
  std::vector<std::size_t> labels;  // argmax of each member's own prediction
  double threshold = 0.9;
};

/// Nodes whose largest predicted probability exceeds omega.
ConfidentSet select_confident(const Matrix& p, double omega);

/// Positives per node plus the class information that defines its negatives.
///
/// Negatives of node i are every bank index j != i whose bank prediction class
/// differs from i's live prediction class, minus the positives of i. They are
/// kept implicit because materializing them costs O(n^2) memory.
struct ContrastSets {
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::size_t> anchor_class;  // argmax of the live prediction
  std::vector<std::size_t> bank_class;    // argmax of each bank prediction

  std::vector<std::size_t> negatives(std::size_t i) const;
};

/// Top-K bank rows by cosine similarity to each z_i, excluding i; ties go to
/// the lower index. Requires 1 <= K < n.
std::vector<std::vector<std::size_t>> knn_positives(const Matrix& z, const MemoryBanks& banks,
                                                    std::size_t k);

ContrastSets label_negatives(const Matrix& p, const MemoryBanks& banks,
                             std::vector<std::vector<std::size_t>> positives);

/// -(1/|D|) sum_{i in D} log p_{i,y_i} - alpha sum_i sum_{j in pos(i)} cos(z_i, F_j)
///   + beta sum_i sum_{k in neg(i)} cos(z_i, F_k).
/// Bank rows are constants; an empty confident set contributes 0.
ad::Var loss_graph(ad::Var p, ad::Var z, const MemoryBanks& banks, const ConfidentSet& conf,
                   const ContrastSets& sets, double alpha, double beta);
double loss_graph(const Matrix& p, const Matrix& z, const MemoryBanks& banks,
                  const ConfidentSet& conf, const ContrastSets& sets, double alpha, double beta);

/// Euclidean projection onto {v in [0,1]^e : sum v <= budget}.
///
/// Clips to the box when that already meets the budget; otherwise finds the
/// shift g >= 0 with sum(clip(v - g)) = budget by bisection on [0, max v].
std::vector<double> project_budget(std::span<const double> v, double budget);

/// delta_a <- project_budget(delta_a - eta * grad, budget).
void pgd_step_structure(AdaptationDeltas& deltas, std::span<const double> grad, double eta);

/// delta_x <- delta_x - eta * grad.
void feature_gd_step(AdaptationDeltas& deltas, const Matrix& grad, double eta);

/// Samples a discrete graph: edge e survives with probability 1 - delta_a[e].
/// Features become X + delta_x. Deterministic per seed.
TargetGraph finalize_structure(const TargetGraph& g, const AdaptationDeltas& deltas,
                               std::uint64_t seed);

/// One real per line in edge-list order.
void save_mask(const std::vector<double>& delta_a, const std::filesystem::path& path);
std::vector<double> load_mask(const std::filesystem::path& path);

}  // namespace sfgda
