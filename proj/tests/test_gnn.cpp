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
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "sfgda/errors.hpp"
#include "sfgda/gnn.hpp"
#include "sfgda/graph.hpp"
#include "test_util.hpp"

namespace sfgda {
namespace {

using testing::max_abs_diff;
using testing::random_graph;
using testing::random_matrix;
using testing::TempDir;

TEST(InitModel, DeterministicPerSeed) {
  EXPECT_EQ(init_model(5, 8, 3, 2, 42), init_model(5, 8, 3, 2, 42));
  EXPECT_NE(init_model(5, 8, 3, 2, 42), init_model(5, 8, 3, 2, 43));
}

TEST(InitModel, CitationScaleShapes) {
  GnnModel m = init_model(6775, 128, 5, 2, 0);
  ASSERT_EQ(m.num_layers(), 2u);
  EXPECT_EQ(m.layer_weights[0].shape_string(), "(6775x128)");
  EXPECT_EQ(m.layer_weights[1].shape_string(), "(128x128)");
  EXPECT_EQ(m.classifier_weight.shape_string(), "(128x5)");
  EXPECT_EQ(m.classifier_bias.shape_string(), "(1x5)");
}

TEST(InitModel, ZeroCountsRejected) {
  EXPECT_THROW(init_model(4, 0, 3, 2, 0), ContractError);
  EXPECT_THROW(init_model(4, 8, 3, 0, 0), ContractError);
}

TEST(InitModel, GlorotBoundsAndZeroBias) {
  GnnModel m = init_model(10, 20, 4, 2, 1);
  auto check = [](const Matrix& w) {
    const double s = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (double v : w.data()) EXPECT_LE(std::abs(v), s);
  };
  for (const Matrix& w : m.layer_weights) check(w);
  check(m.classifier_weight);
  for (double b : m.classifier_bias.data()) EXPECT_EQ(b, 0.0);
}

TEST(Forward, ZeroWeightsGiveZeroRepresentationsAndUniformPredictions) {
  GnnModel m = init_model(3, 4, 5, 2, 0);
  for (Matrix* p : m.parameters()) *p = Matrix(p->rows(), p->cols());
  std::mt19937_64 rng(21);
  TargetGraph g = random_graph(6, 3, 5, 0.5, rng);
  ForwardOutput out = forward(m, normalize_adjacency(g), g.features);
  EXPECT_EQ(out.z, Matrix(6, 4));
  for (double v : out.p.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Forward, SingleNodeOneLayer) {
  GnnModel m = init_model(3, 4, 2, 1, 5);
  TargetGraph g{1, {}, Matrix{{0.5, -1.0, 2.0}}, std::nullopt, 2};
  ForwardOutput out = forward(m, normalize_adjacency(g), g.features);
  Matrix expected_z = matmul(g.features, m.layer_weights[0]);
  for (double& v : expected_z.data()) v = std::max(v, 0.0);
  EXPECT_LT(max_abs_diff(out.z, expected_z), 1e-15);
  Matrix logits = matmul(expected_z, m.classifier_weight) + m.classifier_bias;
  EXPECT_LT(max_abs_diff(out.p, row_softmax(logits)), 1e-15);
}

TEST(Forward, ZeroWeightEdgeMatchesRemovedEdge) {
  std::mt19937_64 rng(22);
  GnnModel m = init_model(4, 6, 3, 2, 2);
  for (int trial = 0; trial < 10; ++trial) {
    TargetGraph g = random_graph(15, 4, 3, 0.3, rng);
    if (g.edges.empty()) continue;
    const std::size_t e = rng() % g.edges.size();
    std::vector<double> w(g.edges.size(), 1.0);
    w[e] = 0.0;
    TargetGraph removed = g;
    removed.edges.erase(removed.edges.begin() + static_cast<std::ptrdiff_t>(e));
    EXPECT_LT(max_abs_diff(forward(m, normalize_adjacency(g, w), g.features).p,
                           forward(m, normalize_adjacency(removed), g.features).p),
              1e-12);
  }
}

TEST(Forward, ShapeMismatch) {
  GnnModel m = init_model(4, 6, 3, 2, 2);
  TargetGraph g{2, {{0, 1}}, Matrix(2, 3), std::nullopt, 3};
  EXPECT_THROW(forward(m, normalize_adjacency(g), g.features), ShapeError);
  EXPECT_THROW(forward(m, normalize_adjacency(g), Matrix(3, 4)), ShapeError);
}

TEST(Forward, PredictionsAreRowStochastic) {
  std::mt19937_64 rng(23);
  GnnModel m = init_model(4, 6, 3, 2, 3);
  TargetGraph g = random_graph(20, 4, 3, 0.2, rng);
  ForwardOutput out = forward(m, normalize_adjacency(g), g.features);
  for (std::size_t i = 0; i < g.n; ++i) {
    double s = 0.0;
    for (double v : out.p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  EXPECT_TRUE(out.z.all_finite());
}

TEST(Forward, PermutationEquivariance) {
  std::mt19937_64 rng(24);
  GnnModel m = init_model(4, 6, 3, 2, 4);
  TargetGraph g = random_graph(12, 4, 3, 0.3, rng);
  std::vector<std::size_t> pi(g.n);
  std::iota(pi.begin(), pi.end(), 0);
  std::shuffle(pi.begin(), pi.end(), rng);
  TargetGraph h = g;
  for (Edge& e : h.edges) e = {std::min(pi[e.u], pi[e.v]), std::max(pi[e.u], pi[e.v])};
  for (std::size_t i = 0; i < g.n; ++i)
    std::copy(g.features.row(i).begin(), g.features.row(i).end(), h.features.row(pi[i]).begin());
  ForwardOutput a = forward(m, normalize_adjacency(g), g.features);
  ForwardOutput b = forward(m, normalize_adjacency(h), h.features);
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a.p(i, c), b.p(pi[i], c), 1e-14);
}

TEST(Forward, RecordedMatchesValueOnlyPath) {
  std::mt19937_64 rng(25);
  GnnModel m = init_model(4, 6, 3, 2, 5);
  TargetGraph g = random_graph(10, 4, 3, 0.3, rng);
  const GcnPattern pattern = build_gcn_pattern(g);
  ad::Tape tape;
  ModelVars vars = record_model(tape, m, true);
  const std::vector<double> vals = gcn_normalized_values(pattern, std::vector<double>(g.edges.size(), 1.0));
  ForwardVars fv = forward(vars, pattern.structure, tape.constant(Matrix(vals.size(), 1, vals)),
                           tape.constant(g.features));
  ForwardOutput plain = forward(m, normalize_adjacency(g), g.features);
  EXPECT_EQ(fv.p.value(), plain.p);
  EXPECT_EQ(fv.z.value(), plain.z);
}

// Gradients with respect to every parameter block and the input features.
TEST(Forward, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(26);
  const GnnModel base = init_model(5, 8, 3, 2, 6);
  TargetGraph g = random_graph(20, 5, 3, 0.2, rng);
  const GcnPattern pattern = build_gcn_pattern(g);
  const std::vector<double> vals = gcn_normalized_values(pattern, std::vector<double>(g.edges.size(), 1.0));
  const Matrix rz = random_matrix(20, 8, rng), rp = random_matrix(20, 3, rng);
  auto f = [&](ad::Tape& t, std::span<const ad::Var> v) {
    ModelVars mv{{v[0], v[1]}, v[2], v[3]};
    ForwardVars fv = forward(mv, pattern.structure, t.constant(Matrix(vals.size(), 1, vals)), v[4]);
    return ad::add(ad::sum(ad::hadamard(fv.z, t.constant(rz))),
                   ad::sum(ad::hadamard(ad::log_clamped(fv.p, 1e-12), t.constant(rp))));
  };
  std::vector<Matrix> point = {base.layer_weights[0], base.layer_weights[1], base.classifier_weight,
                               random_matrix(1, 3, rng), g.features};
  EXPECT_LT(ad::grad_check(f, point, 1e-4), 1e-4);
}

TEST(Adam, FirstStepMovesEachCoordinateByLearningRate) {
  Matrix p{{1.0, -2.0}};
  Adam opt(0.1);
  opt.step({&p}, {Matrix{{3.0, -0.5}}});
  EXPECT_NEAR(p(0, 0), 0.9, 1e-7);
  EXPECT_NEAR(p(0, 1), -1.9, 1e-7);
}

TargetGraph separable_source(std::uint64_t seed) {
  ShiftSpec s;
  s.seed = seed;
  s.target_mean_shift = 0.0;
  s.edge_noise = 0.0;
  s.class_mean_separation = 3.0;
  return make_shift_pair(s).first;
}

TEST(Pretrain, SeparableSourceReachesHighTrainAccuracy) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TargetGraph src = separable_source(seed);
    PretrainResult r = pretrain_source(init_model(src.feature_dim(), 32, 3, 2, seed), src,
                                       split_nodes(src, seed), {});
    EXPECT_GE(r.train_accuracy, 0.95) << "seed " << seed;
    EXPECT_EQ(r.loss_trace.size(), 200u);
    std::size_t rises = 0;
    for (std::size_t e = 1; e < r.loss_trace.size(); ++e) rises += r.loss_trace[e] > r.loss_trace[e - 1];
    EXPECT_LE(static_cast<double>(rises), 0.1 * static_cast<double>(r.loss_trace.size() - 1));
  }
}

TEST(Pretrain, ZeroEpochsAndZeroLearningRateLeaveModelUnchanged) {
  TargetGraph src = separable_source(1);
  const GnnModel m = init_model(src.feature_dim(), 8, 3, 2, 1);
  const SplitMask split = split_nodes(src, 1);
  PretrainOptions none;
  none.epochs = 0;
  EXPECT_EQ(pretrain_source(m, src, split, none).model, m);
  PretrainOptions frozen;
  frozen.epochs = 5;
  frozen.lr = 0.0;
  EXPECT_EQ(pretrain_source(m, src, split, frozen).model, m);
}

TEST(Pretrain, RequiresLabels) {
  TargetGraph src = separable_source(2);
  const SplitMask split = split_nodes(src, 2);
  src.labels.reset();
  EXPECT_THROW(pretrain_source(init_model(src.feature_dim(), 8, 3, 2, 0), src, split, {}),
               ContractError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ckpt");
  GnnModel m = init_model(7, 5, 3, 2, 9);
  m.classifier_bias(0, 1) = -0.125;
  save_checkpoint(m, dir / "m.ckpt");
  EXPECT_EQ(load_checkpoint(dir / "m.ckpt"), m);
}

TEST(Checkpoint, HeaderLayout) {
  TempDir dir("hdr");
  save_checkpoint(init_model(7, 5, 3, 2, 9), dir / "m.ckpt");
  std::ifstream in(dir / "m.ckpt", std::ios::binary);
  char magic[4];
  std::uint32_t header[5];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  EXPECT_EQ(std::string(magic, 4), "GCTA");
  EXPECT_EQ(header[0], 1u);
  EXPECT_EQ(header[1], 2u);
  EXPECT_EQ(header[2], 7u);
  EXPECT_EQ(header[3], 5u);
  EXPECT_EQ(header[4], 3u);
  const auto expected_bytes = 4 + sizeof(header) + sizeof(double) * (7 * 5 + 5 * 5 + 5 * 3 + 3);
  EXPECT_EQ(std::filesystem::file_size(dir / "m.ckpt"), expected_bytes);
}

TEST(Checkpoint, CorruptFilesAreIoErrors) {
  TempDir dir("bad");
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), IoError);
  save_checkpoint(init_model(3, 2, 2, 1, 0), dir / "m.ckpt");
  std::filesystem::resize_file(dir / "m.ckpt", 30);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

}  // namespace
}  // namespace sfgda
