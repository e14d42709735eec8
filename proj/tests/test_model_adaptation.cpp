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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "sfgda/errors.hpp"
#include "sfgda/gnn.hpp"
#include "sfgda/graph.hpp"
#include "sfgda/model_adaptation.hpp"
#include "test_util.hpp"

namespace sfgda {
namespace {

using testing::random_graph;
using testing::random_matrix;

MemoryBanks banks_with_pred(Matrix pred) {
  MemoryBanks b;
  b.repr = Matrix(pred.rows(), 2, 1.0);
  b.pred = std::move(pred);
  return b;
}

SparseAdjacency star(std::size_t n, std::size_t center, const std::vector<double>& w) {
  TargetGraph g;
  g.n = n;
  for (std::size_t j = 0; j < n; ++j)
    if (j != center) g.edges.push_back({std::min(center, j), std::max(center, j)});
  g.features = Matrix(n, 1);
  return weighted_neighborhoods(g, w);
}

TEST(PseudoLabels, SingleNeighbor) {
  MemoryBanks b = banks_with_pred(Matrix{{0.5, 0.5}, {0.2, 0.8}});
  EXPECT_EQ(neighborhood_pseudo_labels(star(2, 0, {1.0}), b).class_id[0], 1u);
}

TEST(PseudoLabels, MeanOfTwoNeighbors) {
  MemoryBanks b = banks_with_pred(Matrix{{0.0, 1.0}, {0.9, 0.1}, {0.2, 0.8}});
  PseudoLabels pl = neighborhood_pseudo_labels(star(3, 0, {1.0, 1.0}), b);
  EXPECT_EQ(pl.class_id[0], 0u);
  EXPECT_EQ(pl.onehot.row(0)[0], 1.0);
  EXPECT_EQ(pl.onehot.row(0)[1], 0.0);
}

TEST(PseudoLabels, IsolatedNodeFallsBackToOwnRow) {
  MemoryBanks b = banks_with_pred(Matrix{{0.1, 0.9}});
  TargetGraph g{1, {}, Matrix(1, 1), std::nullopt, 2};
  EXPECT_EQ(neighborhood_pseudo_labels(weighted_neighborhoods(g), b).class_id[0], 1u);
}

TEST(PseudoLabels, DownWeightedNeighborsCountLess) {
  MemoryBanks b = banks_with_pred(Matrix{{0.5, 0.5}, {0.9, 0.1}, {0.2, 0.8}});
  EXPECT_EQ(neighborhood_pseudo_labels(star(3, 0, {0.2, 1.0}), b).class_id[0], 1u);
  // Fully deleted neighborhood behaves like an isolated node.
  MemoryBanks own = banks_with_pred(Matrix{{0.3, 0.7}, {0.9, 0.1}, {0.9, 0.1}});
  EXPECT_EQ(neighborhood_pseudo_labels(star(3, 0, {0.0, 0.0}), own).class_id[0], 1u);
}

TEST(PseudoLabels, TiesGoToLowestClass) {
  MemoryBanks b = banks_with_pred(Matrix{{0.0, 1.0}, {0.5, 0.5}});
  EXPECT_EQ(neighborhood_pseudo_labels(star(2, 0, {1.0}), b).class_id[0], 0u);
}

TEST(PseudoLabels, OnehotRowsAreExact) {
  std::mt19937_64 rng(41);
  TargetGraph g = random_graph(30, 2, 4, 0.1, rng);
  MemoryBanks b = banks_with_pred(row_softmax(random_matrix(30, 4, rng)));
  PseudoLabels pl = neighborhood_pseudo_labels(weighted_neighborhoods(g), b);
  for (std::size_t i = 0; i < g.n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      const double v = pl.onehot(i, c);
      EXPECT_TRUE(v == 0.0 || v == 1.0);
      s += v;
      if (v == 1.0) EXPECT_EQ(pl.class_id[i], c);
    }
    EXPECT_EQ(s, 1.0);
  }
}

TEST(Prototypes, Examples) {
  MemoryBanks b;
  b.repr = Matrix{{1, 0}, {0, 1}, {3, 4}};
  b.pred = Matrix(3, 3, 1.0 / 3);
  Prototypes p = compute_prototypes(pseudo_labels_from_classes({0, 0, 1}, 3), b);
  EXPECT_EQ(p.centroids.row(0)[0], 0.5);
  EXPECT_EQ(p.centroids.row(0)[1], 0.5);
  EXPECT_EQ(p.centroids.row(1)[0], 3.0);
  EXPECT_EQ(p.centroids.row(1)[1], 4.0);
  EXPECT_TRUE(p.is_empty(2));
  EXPECT_EQ(p.centroids.row(2)[0], 0.0);
  EXPECT_EQ(p.counts, (std::vector<std::size_t>{2, 1, 0}));
}

TEST(Prototypes, OrderInvariant) {
  std::mt19937_64 rng(42);
  MemoryBanks b;
  b.repr = random_matrix(12, 3, rng);
  std::vector<std::size_t> classes(12);
  for (auto& c : classes) c = rng() % 3;
  std::vector<std::size_t> pi(12);
  std::iota(pi.begin(), pi.end(), 0);
  std::shuffle(pi.begin(), pi.end(), rng);
  MemoryBanks permuted = b;
  std::vector<std::size_t> permuted_classes(12);
  for (std::size_t i = 0; i < 12; ++i) {
    std::copy(b.repr.row(i).begin(), b.repr.row(i).end(), permuted.repr.row(pi[i]).begin());
    permuted_classes[pi[i]] = classes[i];
  }
  Prototypes a = compute_prototypes(pseudo_labels_from_classes(classes, 3), b);
  Prototypes c = compute_prototypes(pseudo_labels_from_classes(permuted_classes, 3), permuted);
  EXPECT_EQ(a.counts, c.counts);
  EXPECT_LT(testing::max_abs_diff(a.centroids, c.centroids), 1e-15);
}

TEST(ConfidenceWeights, Examples) {
  Prototypes p{Matrix{{1, 1}, {2, 0}}, {1, 1}};
  PseudoLabels pl = pseudo_labels_from_classes({1, 1, 0, 0}, 2);
  std::vector<double> w = confidence_weights(Matrix{{2, 0}, {0, 3}, {1, 0}, {-1, -1}}, p, pl);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
  EXPECT_EQ(w[1], 0.0);
  EXPECT_NEAR(w[2], 1 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(w[3], 0.0);
}

TEST(ConfidenceWeights, ScaleInvariant) {
  std::mt19937_64 rng(43);
  Matrix z = random_matrix(10, 4, rng);
  Prototypes p{random_matrix(3, 4, rng), {1, 1, 1}};
  PseudoLabels pl = pseudo_labels_from_classes({0, 1, 2, 0, 1, 2, 0, 1, 2, 0}, 3);
  const std::vector<double> w = confidence_weights(z, p, pl);
  const std::vector<double> scaled = confidence_weights(z * 7.5, Prototypes{p.centroids * 0.01, p.counts}, pl);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], scaled[i], 1e-12);
}

TEST(WeightedCe, Examples) {
  PseudoLabels pl = pseudo_labels_from_classes({1}, 2);
  std::vector<double> one{1.0};
  EXPECT_EQ(loss_weighted_ce(Matrix{{0, 1}}, pl, one), 0.0);
  EXPECT_NEAR(loss_weighted_ce(Matrix{{0.5, 0.5}}, pl, one), std::log(2.0), 1e-15);
  std::vector<double> zero{0.0};
  EXPECT_EQ(loss_weighted_ce(Matrix{{0.9, 0.1}}, pl, zero), 0.0);
  // Floor on the log keeps a zero probability finite.
  EXPECT_NEAR(loss_weighted_ce(Matrix{{1, 0}}, pl, one), -std::log(1e-12), 1e-9);
}

TEST(WeightedCe, NonNegative) {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix p = row_softmax(random_matrix(8, 3, rng, -5, 5));
    std::vector<std::size_t> cls(8);
    std::vector<double> w(8);
    for (std::size_t i = 0; i < 8; ++i) cls[i] = rng() % 3, w[i] = u(rng);
    EXPECT_GE(loss_weighted_ce(p, pseudo_labels_from_classes(cls, 3), w), 0.0);
  }
}

// Direct evaluation of the instance-prototype objective with explicit loops.
double contrastive_oracle(const Matrix& z, const Prototypes& protos, const PseudoLabels& pl,
                          double tau, bool include_positive) {
  double total = 0.0;
  std::size_t active = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const std::size_t c = pl.class_id[i];
    if (protos.is_empty(c)) continue;
    double den = 0.0;
    std::size_t negatives = 0;
    for (std::size_t j = 0; j < protos.centroids.rows(); ++j) {
      if (protos.is_empty(j)) continue;
      if (j != c) ++negatives;
      if (j != c || include_positive) den += std::exp(cosine(z.row(i), protos.centroids.row(j)) / tau);
    }
    for (std::size_t k = 0; k < z.rows(); ++k)
      if (k != i) den += std::exp(cosine(z.row(i), z.row(k)) / tau), ++negatives;
    if (negatives == 0) continue;
    total += -cosine(z.row(i), protos.centroids.row(c)) / tau + std::log(den);
    ++active;
  }
  return active ? total / static_cast<double>(active) : 0.0;
}

TEST(InstancePrototype, SingleNodeClosedForm) {
  Prototypes p{Matrix{{1, 0}, {0, 1}}, {1, 1}};
  PseudoLabels pl = pseudo_labels_from_classes({0}, 2);
  EXPECT_NEAR(loss_instance_prototype(Matrix{{1, 0}}, p, pl, {}), -5.0, 1e-12);
  ContrastiveOptions standard;
  standard.include_positive_in_denominator = true;
  EXPECT_NEAR(loss_instance_prototype(Matrix{{1, 0}}, p, pl, standard),
              -5.0 + std::log(std::exp(5.0) + 1.0), 1e-12);
  ContrastiveOptions hot;
  hot.tau = 1e7;
  EXPECT_NEAR(loss_instance_prototype(Matrix{{1, 0}}, p, pl, hot), 0.0, 1e-6);
}

TEST(InstancePrototype, DecreasesAsAnchorAlignsWithPrototype) {
  // The negative prototype is orthogonal to the rotation plane, so only cos(z, mu_c) changes.
  Prototypes p{Matrix{{1, 0, 0}, {0, 0, 1}}, {1, 1}};
  PseudoLabels pl = pseudo_labels_from_classes({0}, 2);
  double prev = std::numeric_limits<double>::infinity();
  for (double angle = 1.5; angle >= 0.0; angle -= 0.1) {
    const double loss =
        loss_instance_prototype(Matrix{{std::cos(angle), std::sin(angle), 0}}, p, pl, {});
    EXPECT_LT(loss, prev);
    prev = loss;
  }
}

TEST(InstancePrototype, MatchesLoopOracle) {
  std::mt19937_64 rng(45);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix z = random_matrix(9, 4, rng);
    std::vector<std::size_t> cls(9);
    for (auto& c : cls) c = rng() % 3;
    PseudoLabels pl = pseudo_labels_from_classes(cls, 3);
    MemoryBanks b;
    b.repr = random_matrix(9, 4, rng);
    Prototypes protos = compute_prototypes(pl, b);
    for (bool inc : {false, true}) {
      ContrastiveOptions opt;
      opt.include_positive_in_denominator = inc;
      EXPECT_NEAR(loss_instance_prototype(z, protos, pl, opt),
                  contrastive_oracle(z, protos, pl, 0.2, inc), 1e-10);
    }
  }
}

TEST(InstancePrototype, EmptyPrototypeAnchorsAreSkipped) {
  Prototypes p{Matrix{{1, 0}, {0, 0}, {0, 1}}, {1, 0, 1}};
  PseudoLabels pl = pseudo_labels_from_classes({0, 1}, 3);
  Matrix z{{0.8, 0.6}, {0.3, -1.0}};
  EXPECT_NEAR(loss_instance_prototype(z, p, pl, {}), contrastive_oracle(z, p, pl, 0.2, false), 1e-12);
  PseudoLabels all_empty = pseudo_labels_from_classes({1, 1}, 3);
  EXPECT_EQ(loss_instance_prototype(z, p, all_empty, {}), 0.0);
}

TEST(InstancePrototype, BatchRestrictsAnchorsAndNegatives) {
  std::mt19937_64 rng(46);
  Matrix z = random_matrix(8, 3, rng);
  PseudoLabels pl = pseudo_labels_from_classes({0, 1, 2, 0, 1, 2, 0, 1}, 3);
  MemoryBanks b;
  b.repr = random_matrix(8, 3, rng);
  Prototypes protos = compute_prototypes(pl, b);
  ContrastiveOptions opt;
  opt.batch = {1, 4, 6};
  Matrix sub(3, 3);
  std::vector<std::size_t> sub_cls;
  for (std::size_t r = 0; r < 3; ++r) {
    std::copy(z.row(opt.batch[r]).begin(), z.row(opt.batch[r]).end(), sub.row(r).begin());
    sub_cls.push_back(pl.class_id[opt.batch[r]]);
  }
  EXPECT_NEAR(loss_instance_prototype(z, protos, pl, opt),
              contrastive_oracle(sub, protos, pseudo_labels_from_classes(sub_cls, 3), 0.2, false),
              1e-12);
}

TEST(InstancePrototype, RejectsNonPositiveTau) {
  Prototypes p{Matrix{{1, 0}, {0, 1}}, {1, 1}};
  ContrastiveOptions bad;
  bad.tau = 0.0;
  EXPECT_THROW(loss_instance_prototype(Matrix{{1, 0}}, p, pseudo_labels_from_classes({0}, 2), bad),
               ContractError);
}

TEST(LossModel, EndpointsAndMixture) {
  EXPECT_EQ(loss_model(1.3, 0.7, 0.0), 1.3);
  EXPECT_EQ(loss_model(1.3, 0.7, 1.0), 0.7);
  EXPECT_NEAR(loss_model(1.0, 0.5, 0.2), 0.9, 1e-15);
  EXPECT_THROW(loss_model(1.0, 0.5, 1.1), ContractError);
}

// Model loss gradient with respect to the extractor and classifier on a 20-node graph.
TEST(LossModel, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(47);
  TargetGraph g = random_graph(20, 5, 3, 0.2, rng);
  const GnnModel m = init_model(5, 8, 3, 2, 7);
  const SparseAdjacency adj = normalize_adjacency(g);
  MemoryBanks banks = init_banks(forward(m, adj, g.features), 0.9);
  banks.repr = random_matrix(20, 8, rng, 0.0, 1.0);
  const PseudoLabels pl = neighborhood_pseudo_labels(weighted_neighborhoods(g), banks);
  const Prototypes protos = compute_prototypes(pl, banks);
  const std::vector<double> w = confidence_weights(forward(m, adj, g.features).z, protos, pl);
  auto f = [&](ad::Tape& t, std::span<const ad::Var> v) {
    ModelVars mv{{v[0], v[1]}, v[2], v[3]};
    ForwardVars fv = forward(mv, adj, t.constant(Matrix(adj.nnz(), 1, adj.values)), t.constant(g.features));
    return loss_model(loss_weighted_ce(fv.p, pl, w), loss_instance_prototype(fv.z, protos, pl, {}), 0.2);
  };
  std::vector<Matrix> point = {m.layer_weights[0], m.layer_weights[1], m.classifier_weight,
                               random_matrix(1, 3, rng)};
  EXPECT_LT(ad::grad_check(f, point, 1e-4), 1e-4);
}

}  // namespace
}  // namespace sfgda
