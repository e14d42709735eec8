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

#include "sfgda/model_adaptation.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

#include "sfgda/errors.hpp"

namespace sfgda {

PseudoLabels pseudo_labels_from_classes(std::vector<std::size_t> classes,
                                        std::size_t num_classes) {
  PseudoLabels pl;
  pl.onehot = Matrix(classes.size(), num_classes);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] >= num_classes) throw ContractError("pseudo label outside [0, C)");
    pl.onehot(i, classes[i]) = 1.0;
  }
  pl.class_id = std::move(classes);
  return pl;
}

PseudoLabels neighborhood_pseudo_labels(const SparseAdjacency& neighborhoods,
                                        const MemoryBanks& banks) {
  const Matrix& bank = banks.pred;
  if (neighborhoods.n != bank.rows())
    throw ShapeError("neighborhood_pseudo_labels: graph of " + std::to_string(neighborhoods.n) +
                     " nodes vs bank " + bank.shape_string());
  const std::size_t c = bank.cols();
  std::vector<std::size_t> classes(bank.rows());
  std::vector<double> mean(c);
  for (std::size_t i = 0; i < bank.rows(); ++i) {
    std::fill(mean.begin(), mean.end(), 0.0);
    double total = 0.0;
    for (std::size_t k = neighborhoods.row_offsets[i]; k < neighborhoods.row_offsets[i + 1]; ++k) {
      const double w = neighborhoods.values[k];
      if (w <= 0.0) continue;
      auto row = bank.row(neighborhoods.col_indices[k]);
      for (std::size_t j = 0; j < c; ++j) mean[j] += w * row[j];
      total += w;
    }
    if (total > 0.0) {
      for (double& v : mean) v /= total;
      classes[i] = row_argmax(mean);
    } else {
      classes[i] = row_argmax(bank.row(i));
    }
  }
  return pseudo_labels_from_classes(std::move(classes), c);
}

Prototypes compute_prototypes(const PseudoLabels& pl, const MemoryBanks& banks) {
  const Matrix& f = banks.repr;
  if (f.rows() != pl.class_id.size())
    throw ShapeError("compute_prototypes: bank " + f.shape_string() + " vs " +
                     std::to_string(pl.class_id.size()) + " pseudo-labels");
  Prototypes protos;
  protos.centroids = Matrix(pl.onehot.cols(), f.cols());
  protos.counts.assign(pl.onehot.cols(), 0);
  for (std::size_t i = 0; i < f.rows(); ++i) {
    const std::size_t c = pl.class_id[i];
    ++protos.counts[c];
    auto dst = protos.centroids.row(c);
    auto src = f.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
  for (std::size_t c = 0; c < protos.counts.size(); ++c) {
    if (protos.counts[c] == 0) continue;
    for (double& v : protos.centroids.row(c)) v /= static_cast<double>(protos.counts[c]);
  }
  return protos;
}

std::vector<double> confidence_weights(const Matrix& z, const Prototypes& protos,
                                       const PseudoLabels& pl) {
  if (z.cols() != protos.centroids.cols())
    throw ShapeError("confidence_weights: representations " + z.shape_string() +
                     " vs prototypes " + protos.centroids.shape_string());
  if (z.rows() != pl.class_id.size()) throw ShapeError("confidence_weights: row count mismatch");
  std::vector<double> w(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i)
    w[i] = std::max(0.0, cosine(z.row(i), protos.centroids.row(pl.class_id[i])));
  return w;
}

ad::Var loss_weighted_ce(ad::Var p, const PseudoLabels& pl, std::span<const double> weights) {
  const std::size_t n = p.rows();
  if (pl.class_id.size() != n || weights.size() != n)
    throw ShapeError("loss_weighted_ce: predictions, pseudo-labels and weights disagree on n");
  ad::Tape& tape = *p.tape;
  ad::Var w = tape.constant(Matrix(n, 1, std::vector<double>(weights.begin(), weights.end())));
  ad::Var log_p = ad::pick(ad::log_clamped(p, 1e-12), pl.class_id);
  return ad::scale(ad::sum(ad::hadamard(log_p, w)), -1.0 / static_cast<double>(n));
}

double loss_weighted_ce(const Matrix& p, const PseudoLabels& pl, std::span<const double> weights) {
  ad::Tape tape;
  return loss_weighted_ce(tape.constant(p), pl, weights).value()(0, 0);
}

ad::Var loss_instance_prototype(ad::Var z, const Prototypes& protos, const PseudoLabels& pl,
                                const ContrastiveOptions& options) {
  if (!(options.tau > 0.0)) throw ContractError("loss_instance_prototype: tau must be positive");
  const std::size_t n = z.rows();
  const std::size_t c = protos.centroids.rows();
  if (pl.class_id.size() != n) throw ShapeError("loss_instance_prototype: pseudo-label count");
  if (z.cols() != protos.centroids.cols())
    throw ShapeError("loss_instance_prototype: representations " + z.value().shape_string() +
                     " vs prototypes " + protos.centroids.shape_string());
  ad::Tape& tape = *z.tape;

  std::vector<std::size_t> anchors = options.batch;
  if (anchors.empty()) {
    anchors.resize(n);
    std::iota(anchors.begin(), anchors.end(), 0);
  }
  const std::size_t m = anchors.size();

  ad::Var zn = ad::l2_normalize_rows(z);
  ad::Var za = options.batch.empty() ? zn : ad::gather_rows(zn, anchors);
  ad::Var mu = tape.constant(l2_normalize_rows(protos.centroids));
  const double inv_tau = 1.0 / options.tau;
  ad::Var proto_logits = ad::scale(ad::matmul_nt(za, mu), inv_tau);
  ad::Var inst_logits = ad::scale(ad::matmul_nt(za, za), inv_tau);

  Matrix mask(m, c + m);
  Matrix anchor_weight(m, 1);
  std::vector<std::size_t> anchor_class(m);
  std::size_t active = 0;
  std::size_t skipped = 0;
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t cls = pl.class_id[anchors[r]];
    anchor_class[r] = cls;
    std::size_t negatives = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (protos.is_empty(j)) continue;
      if (j != cls) ++negatives;
      if (j != cls || options.include_positive_in_denominator) mask(r, j) = 1.0;
    }
    for (std::size_t k = 0; k < m; ++k)
      if (k != r) {
        mask(r, c + k) = 1.0;
        ++negatives;
      }
    if (protos.is_empty(cls) || negatives == 0) {
      // Keep the row well-defined; its weight of zero removes it from the loss.
      mask(r, cls) = 1.0;
      ++skipped;
      continue;
    }
    anchor_weight(r, 0) = 1.0;
    ++active;
  }
  if (skipped > 0 && active > 0)
    std::cerr << "warning: " << skipped << " anchor(s) skipped in the contrastive loss\n";
  if (active == 0) return tape.constant(Matrix(1, 1, 0.0));
  anchor_weight *= 1.0 / static_cast<double>(active);

  ad::Var lse = ad::masked_row_logsumexp(ad::hconcat(proto_logits, inst_logits), mask);
  ad::Var positive = ad::pick(proto_logits, anchor_class);
  return ad::sum(ad::hadamard(ad::sub(lse, positive), tape.constant(std::move(anchor_weight))));
}

double loss_instance_prototype(const Matrix& z, const Prototypes& protos, const PseudoLabels& pl,
                               const ContrastiveOptions& options) {
  ad::Tape tape;
  return loss_instance_prototype(tape.constant(z), protos, pl, options).value()(0, 0);
}

double loss_model(double l_ce, double l_co, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("loss_model: lambda outside [0, 1]");
  return (1.0 - lambda) * l_ce + lambda * l_co;
}

ad::Var loss_model(ad::Var l_ce, ad::Var l_co, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("loss_model: lambda outside [0, 1]");
  return ad::add(ad::scale(l_ce, 1.0 - lambda), ad::scale(l_co, lambda));
}

}  // namespace sfgda
