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
#include <string>
#include <vector>

#include "sfgda/gnn.hpp"
#include "sfgda/graph.hpp"
#include "sfgda/graph_adaptation.hpp"

namespace sfgda {

/// Hyperparameters of one adaptation run.
struct AdaptConfig {
  double lambda = 0.2;  // CE / contrastive trade-off of the model loss
  double alpha = 0.5;   // positive-neighbor weight of the graph loss
  double beta = 0.5;    // negative weight of the graph loss
  double tau = 0.2;
  double omega = 0.9;  // confidence threshold
  std::size_t k = 5;   // positives per node
  double momentum = 0.9;
  double budget_fraction = 0.2;
  double eta_model = 1e-3;
  double eta_delta = 0.01;
  std::size_t t_m = 1;
  std::size_t t_f = 1;
  std::size_t t_s = 1;
  std::size_t epochs = 200;
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 128;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;  // 0 = full-graph contrastive loss
  bool include_positive_in_denominator = false;

  void validate() const;
};

struct AdaptReport {
  // Last value of each loss per epoch; empty when that phase did not run.
  std::vector<std::optional<double>> loss_m;
  std::vector<std::optional<double>> loss_g;
  std::vector<double> acc;  // per-epoch target accuracy when labels are available
  std::optional<double> spm_acc;
  std::optional<double> final_acc;
  std::size_t edges_deleted = 0;
  std::size_t epochs_run = 0;
  double seconds = 0.0;
};

struct AdaptResult {
  GnnModel model;
  TargetGraph refined;
  AdaptationDeltas deltas;
  Matrix probabilities;
  std::vector<std::size_t> predictions;
  AdaptReport report;
};

/// Alternates model adaptation (t_m steps on the model loss, banks updated after
/// each step) with graph adaptation (t_f feature steps, t_s projected structure
/// steps on the graph loss) for `epochs` epochs, then samples the final graph
/// and predicts on it. Stops early once both losses change by less than 1e-6
/// for 10 consecutive epochs. Deterministic per cfg.seed.
AdaptResult adapt(const GnnModel& model, const TargetGraph& g, const AdaptConfig& cfg);

/// Fraction of exact matches.
double evaluate_accuracy(std::span<const std::size_t> predictions,
                         std::span<const std::size_t> labels);

/// Representations Z under (A', X') for the given deltas.
Matrix embeddings(const GnnModel& model, const TargetGraph& g, const AdaptationDeltas& deltas);

/// n lines of h space-separated reals.
void export_embeddings(const GnnModel& model, const TargetGraph& g, const AdaptationDeltas& deltas,
                       const std::filesystem::path& path);

/// JSON document with keys loss_m, loss_g, acc, final_acc, edges_deleted, seconds.
std::string report_to_json(const AdaptReport& report);

}  // namespace sfgda
