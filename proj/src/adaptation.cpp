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

#include "sfgda/adaptation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "sfgda/errors.hpp"
#include "sfgda/memory_banks.hpp"
#include "sfgda/model_adaptation.hpp"

namespace sfgda {

void AdaptConfig::validate() const {
  auto fail = [](const std::string& what) { throw ContractError("AdaptConfig: " + what); };
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must lie in [0, 1]");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) fail("alpha and beta must be >= 0");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(omega > 0.0 && omega < 1.0)) fail("omega must lie in (0, 1)");
  if (k < 1) fail("k must be >= 1");
  if (!(momentum >= 0.0 && momentum <= 1.0)) fail("momentum must lie in [0, 1]");
  if (!(budget_fraction >= 0.0 && budget_fraction <= 1.0)) fail("budget_fraction must lie in [0, 1]");
  if (!(eta_model >= 0.0) || !(eta_delta >= 0.0)) fail("step sizes must be >= 0");
  if (num_layers < 1 || hidden_dim < 1) fail("num_layers and hidden_dim must be positive");
}

namespace {

constexpr double kConvergenceTol = 1e-6;
constexpr std::size_t kConvergencePatience = 10;

void require_finite(double v, const char* term, std::size_t epoch) {
  if (!std::isfinite(v))
    throw NumericalError(std::string(term) + " became non-finite at epoch " + std::to_string(epoch));
}

Matrix column(const std::vector<double>& v) { return Matrix(v.size(), 1, v); }

// Graph loss on a live forward pass; selections are taken from its values.
ad::Var record_graph_loss(const ForwardVars& fv, const MemoryBanks& banks, const AdaptConfig& cfg) {
  const Matrix& z = fv.z.value();
  const Matrix& p = fv.p.value();
  ConfidentSet conf = select_confident(p, cfg.omega);
  ContrastSets sets = label_negatives(p, banks, knn_positives(z, banks, cfg.k));
  return loss_graph(fv.p, fv.z, banks, conf, sets, cfg.alpha, cfg.beta);
}

std::vector<std::size_t> sample_batch(std::size_t n, std::size_t size, std::mt19937_64& rng) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  if (size == 0 || size >= n) return {};
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(size);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

AdaptResult adapt(const GnnModel& model, const TargetGraph& g, const AdaptConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  model.validate();
  g.validate();
  if (model.input_dim() != g.feature_dim() || model.num_classes() != g.num_classes)
    throw ContractError("adapt: model expects d=" + std::to_string(model.input_dim()) + ", C=" +
                        std::to_string(model.num_classes()) + " but graph has d=" +
                        std::to_string(g.feature_dim()) + ", C=" + std::to_string(g.num_classes));
  const bool graph_steps = cfg.epochs > 0 && (cfg.t_f > 0 || cfg.t_s > 0);
  if (graph_steps && cfg.k >= g.n)
    throw ContractError("adapt: k=" + std::to_string(cfg.k) + " needs at least k+1 nodes");

  AdaptResult result;
  AdaptReport& report = result.report;
  GnnModel m = model;
  AdaptationDeltas deltas = AdaptationDeltas::zeros(g, cfg.budget_fraction);
  const GcnPattern pattern = build_gcn_pattern(g);
  const SparseAdjacency& structure = pattern.structure;

  MemoryBanks banks = init_banks(forward(m, normalize_adjacency(g), g.features), cfg.momentum);
  if (g.has_labels())
    report.spm_acc = evaluate_accuracy(row_argmax(banks.pred), *g.labels);

  Adam optimizer(cfg.eta_model);
  std::mt19937_64 batch_rng(cfg.seed);
  std::optional<double> prev_m, prev_g;
  std::size_t quiet_epochs = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<double> weights = apply_structure_delta(g, deltas);
    const std::vector<double> adj_values = gcn_normalized_values(pattern, weights);
    const SparseAdjacency neighborhoods = weighted_neighborhoods(g, weights);
    const Matrix x_prime = apply_feature_delta(g.features, deltas);
    std::optional<double> epoch_m, epoch_g;

    // Model adaptation: deltas frozen.
    for (std::size_t step = 0; step < cfg.t_m; ++step) {
      ad::Tape tape;
      ModelVars vars = record_model(tape, m, true);
      ForwardVars fv = forward(vars, structure, tape.constant(column(adj_values)), tape.constant(x_prime));
      ForwardOutput out{fv.z.value(), fv.p.value()};

      PseudoLabels pl = neighborhood_pseudo_labels(neighborhoods, banks);
      Prototypes protos = compute_prototypes(pl, banks);
      std::vector<double> w = confidence_weights(out.z, protos, pl);
      ContrastiveOptions co_opts{cfg.tau, cfg.include_positive_in_denominator,
                                 sample_batch(g.n, cfg.batch_size, batch_rng)};
      ad::Var l_ce = loss_weighted_ce(fv.p, pl, w);
      ad::Var l_co = loss_instance_prototype(fv.z, protos, pl, co_opts);
      require_finite(l_ce.value()(0, 0), "L_CE", epoch);
      require_finite(l_co.value()(0, 0), "L_CO", epoch);
      ad::Var l_m = loss_model(l_ce, l_co, cfg.lambda);
      tape.backward(l_m);

      std::vector<Matrix> grads;
      for (const ad::Var& v : vars.all()) grads.push_back(v.grad());
      optimizer.step(m.parameters(), grads);
      for (const Matrix* p : m.parameters())
        if (!p->all_finite()) throw NumericalError("model parameters became non-finite at epoch " + std::to_string(epoch));
      momentum_update(banks, out);
      epoch_m = l_m.value()(0, 0);
    }

    // Graph adaptation, features: model and mask frozen.
    for (std::size_t step = 0; step < cfg.t_f; ++step) {
      ad::Tape tape;
      ModelVars vars = record_model(tape, m, false);
      ad::Var dx = tape.leaf(deltas.delta_x);
      ad::Var x = apply_feature_delta(tape.constant(g.features), dx);
      ForwardVars fv = forward(vars, structure, tape.constant(column(adj_values)), x);
      ad::Var l_g = record_graph_loss(fv, banks, cfg);
      require_finite(l_g.value()(0, 0), "L_G", epoch);
      tape.backward(l_g);
      feature_gd_step(deltas, dx.grad(), cfg.eta_delta);
      if (!deltas.delta_x.all_finite())
        throw NumericalError("feature delta became non-finite at epoch " + std::to_string(epoch));
      epoch_g = l_g.value()(0, 0);
    }

    // Graph adaptation, structure: model and features frozen.
    const Matrix x_struct = apply_feature_delta(g.features, deltas);
    for (std::size_t step = 0; step < cfg.t_s && !g.edges.empty(); ++step) {
      ad::Tape tape;
      ModelVars vars = record_model(tape, m, false);
      ad::Var da = tape.leaf(column(deltas.delta_a));
      ad::Var values = gcn_normalized_values(pattern, apply_structure_delta(da));
      ForwardVars fv = forward(vars, structure, values, tape.constant(x_struct));
      ad::Var l_g = record_graph_loss(fv, banks, cfg);
      require_finite(l_g.value()(0, 0), "L_G", epoch);
      tape.backward(l_g);
      pgd_step_structure(deltas, da.grad().data(), cfg.eta_delta);
      epoch_g = l_g.value()(0, 0);
    }

    report.loss_m.push_back(epoch_m);
    report.loss_g.push_back(epoch_g);
    report.epochs_run = epoch;
    if (g.has_labels()) {
      const SparseAdjacency adj = normalize_adjacency(g, apply_structure_delta(g, deltas));
      report.acc.push_back(
          evaluate_accuracy(predict(m, adj, apply_feature_delta(g.features, deltas)), *g.labels));
    }

    auto settled = [](const std::optional<double>& now, const std::optional<double>& before) {
      if (!now) return true;
      return before.has_value() && std::abs(*now - *before) < kConvergenceTol;
    };
    const bool any_loss = epoch_m || epoch_g;
    quiet_epochs =
        any_loss && settled(epoch_m, prev_m) && settled(epoch_g, prev_g) ? quiet_epochs + 1 : 0;
    prev_m = epoch_m;
    prev_g = epoch_g;
    if (quiet_epochs >= kConvergencePatience) break;
  }

  result.refined = finalize_structure(g, deltas, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  ForwardOutput final_out =
      forward(m, normalize_adjacency(result.refined), result.refined.features);
  result.predictions = row_argmax(final_out.p);
  result.probabilities = std::move(final_out.p);
  if (g.has_labels()) report.final_acc = evaluate_accuracy(result.predictions, *g.labels);
  report.edges_deleted = g.edges.size() - result.refined.edges.size();
  result.model = std::move(m);
  result.deltas = std::move(deltas);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

double evaluate_accuracy(std::span<const std::size_t> predictions,
                         std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size())
    throw ContractError("evaluate_accuracy: " + std::to_string(predictions.size()) +
                        " predictions for " + std::to_string(labels.size()) + " labels");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

Matrix embeddings(const GnnModel& model, const TargetGraph& g, const AdaptationDeltas& deltas) {
  std::optional<std::vector<double>> weights;
  if (!deltas.delta_a.empty()) weights = apply_structure_delta(g, deltas);
  const SparseAdjacency adj =
      weights ? normalize_adjacency(g, std::span<const double>(*weights)) : normalize_adjacency(g);
  const Matrix x = deltas.delta_x.empty() ? g.features : apply_feature_delta(g.features, deltas);
  return forward(model, adj, x).z;
}

void export_embeddings(const GnnModel& model, const TargetGraph& g, const AdaptationDeltas& deltas,
                       const std::filesystem::path& path) {
  const Matrix z = embeddings(model, g, deltas);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", z(i, j));
      out << (j ? " " : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::string report_to_json(const AdaptReport& report) {
  using nlohmann::json;
  auto trace = [](const std::vector<std::optional<double>>& v) {
    json arr = json::array();
    for (const auto& x : v) arr.push_back(x ? json(*x) : json(nullptr));
    return arr;
  };
  json doc;
  doc["loss_m"] = trace(report.loss_m);
  doc["loss_g"] = trace(report.loss_g);
  doc["acc"] = report.acc;
  doc["final_acc"] = report.final_acc ? json(*report.final_acc) : json(nullptr);
  doc["spm_acc"] = report.spm_acc ? json(*report.spm_acc) : json(nullptr);
  doc["edges_deleted"] = report.edges_deleted;
  doc["epochs_run"] = report.epochs_run;
  doc["seconds"] = report.seconds;
  return doc.dump(2);
}

}  // namespace sfgda
