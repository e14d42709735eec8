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
#include <vector>

#include "sfgda/autodiff.hpp"
#include "sfgda/graph.hpp"
#include "sfgda/matrix.hpp"

namespace sfgda {

/// GCN feature extractor (L propagation layers) followed by a linear-softmax classifier.
struct GnnModel {
  std::vector<Matrix> layer_weights;  // d x h, then h x h
  Matrix classifier_weight;           // h x C
  Matrix classifier_bias;             // 1 x C

  std::size_t num_layers() const { return layer_weights.size(); }
  std::size_t input_dim() const { return layer_weights.empty() ? 0 : layer_weights.front().rows(); }
  std::size_t hidden_dim() const { return classifier_weight.rows(); }
  std::size_t num_classes() const { return classifier_weight.cols(); }

  void validate() const;

  /// Parameters in declaration order: layers, classifier weight, classifier bias.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;

  friend bool operator==(const GnnModel&, const GnnModel&) = default;
};

/// Z is the output of the last extractor layer, P the row-stochastic predictions.
struct ForwardOutput {
  Matrix z;
  Matrix p;
};

/// Glorot-uniform weights, zero bias, deterministic per seed.
GnnModel init_model(std::size_t d, std::size_t h, std::size_t c, std::size_t num_layers,
                    std::uint64_t seed);

/// Model parameters recorded on a tape.
struct ModelVars {
  std::vector<ad::Var> layer_weights;
  ad::Var classifier_weight;
  ad::Var classifier_bias;

  std::vector<ad::Var> all() const;
};

/// Records the parameters as leaves (trainable) or constants.
ModelVars record_model(ad::Tape& tape, const GnnModel& m, bool trainable);

struct ForwardVars {
  ad::Var z;
  ad::Var p;
};

/// Z = relu(A (... relu(A X W1) ...) W_L), P = softmax(Z Wc + b). `adj_values`
/// holds one value per stored entry of `pattern` (nnz x 1).
ForwardVars forward(const ModelVars& m, const SparseAdjacency& pattern, ad::Var adj_values,
                    ad::Var x);

/// Value-only forward pass on a normalized adjacency.
ForwardOutput forward(const GnnModel& m, const SparseAdjacency& adj_hat, const Matrix& x);

/// Argmax class per node.
std::vector<std::size_t> predict(const GnnModel& m, const SparseAdjacency& adj_hat,
                                 const Matrix& x);

/// Adaptive-moment optimizer with L2 weight decay folded into the gradient.
class Adam {
 public:
  explicit Adam(double lr, double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  /// One update; `grads` align with `params`.
  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);

 private:
  double lr_;
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct PretrainOptions {
  std::size_t epochs = 200;
  double lr = 1e-3;
  double weight_decay = 5e-4;
};

struct PretrainResult {
  GnnModel model;  // best-validation checkpoint
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t best_epoch = 0;      // 0 means the initial parameters
  std::vector<double> loss_trace;  // mean train cross-entropy per epoch
};

/// Supervised full-batch training on the train split with Adam; keeps the
/// parameters with the best validation accuracy (later epochs win ties).
PretrainResult pretrain_source(GnnModel m, const TargetGraph& source, const SplitMask& split,
                               const PretrainOptions& options);

/// Binary little-endian checkpoint: "GCTA", u32 version, u32 L, d, h, C, then
/// the raw doubles of every parameter block in declaration order.
void save_checkpoint(const GnnModel& m, const std::filesystem::path& path);
GnnModel load_checkpoint(const std::filesystem::path& path);

}  // namespace sfgda
