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
#include <span>
#include <vector>

#include "sfgda/autodiff.hpp"
#include "sfgda/matrix.hpp"
#include "sfgda/memory_banks.hpp"

namespace sfgda {

struct PseudoLabels {
  Matrix onehot;  // n x C
  std::vector<std::size_t> class_id;
};

/// Class centroids of banked representations under the current pseudo-labels.
struct Prototypes {
  Matrix centroids;  // C x h
  std::vector<std::size_t> counts;

  bool is_empty(std::size_t c) const { return counts[c] == 0; }
};

/// Pseudo-label of node i: argmax of the weighted mean of its neighbors' bank
/// predictions. `neighborhoods` holds the current (possibly down-weighted) edge
/// weights without self-loops; a node whose neighbor weights sum to zero falls
/// back to its own bank row. Ties go to the lowest class.
PseudoLabels neighborhood_pseudo_labels(const SparseAdjacency& neighborhoods,
                                        const MemoryBanks& banks);

PseudoLabels pseudo_labels_from_classes(std::vector<std::size_t> classes, std::size_t num_classes);

/// Empty classes get a zero centroid and count 0.
Prototypes compute_prototypes(const PseudoLabels& pl, const MemoryBanks& banks);

/// w_i = max(0, cos(z_i, mu_{c(i)})); zero-norm operands give 0.
std::vector<double> confidence_weights(const Matrix& z, const Prototypes& protos,
                                       const PseudoLabels& pl);

/// -(1/n) sum_i w_i log p_{i, c(i)}, log floored at log(1e-12).
ad::Var loss_weighted_ce(ad::Var p, const PseudoLabels& pl, std::span<const double> weights);
double loss_weighted_ce(const Matrix& p, const PseudoLabels& pl, std::span<const double> weights);

struct ContrastiveOptions {
  double tau = 0.2;
  /// Adds the positive prototype term to the denominator (standard InfoNCE).
  bool include_positive_in_denominator = false;
  /// Anchor nodes; empty means every node. With a subset, instance negatives
  /// are drawn from the same subset only.
  std::vector<std::size_t> batch;
};

/// Instance-prototype contrastive loss averaged over anchors:
///   -log exp(s(z_i, mu_c)/tau) / (sum_{j != c} exp(s(z_i, mu_j)/tau)
///                                 + sum_{k != i} exp(s(z_i, z_k)/tau))
/// Prototypes are constants; gradients flow through every z. Empty-flagged
/// prototypes are left out of the negatives, and anchors whose own prototype is
/// empty (or that have no negatives at all) are skipped.
ad::Var loss_instance_prototype(ad::Var z, const Prototypes& protos, const PseudoLabels& pl,
                                const ContrastiveOptions& options);
double loss_instance_prototype(const Matrix& z, const Prototypes& protos, const PseudoLabels& pl,
                               const ContrastiveOptions& options);

/// (1 - lambda) * l_ce + lambda * l_co.
double loss_model(double l_ce, double l_co, double lambda);
ad::Var loss_model(ad::Var l_ce, ad::Var l_co, double lambda);

}  // namespace sfgda
