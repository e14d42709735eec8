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

#include "sfgda/graph_adaptation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "sfgda/errors.hpp"

namespace sfgda {

AdaptationDeltas AdaptationDeltas::zeros(const TargetGraph& g, double budget_fraction) {
  if (!(budget_fraction >= 0.0 && budget_fraction <= 1.0))
    throw ContractError("AdaptationDeltas: budget fraction outside [0, 1]");
  AdaptationDeltas d;
  d.delta_x = Matrix(g.n, g.feature_dim());
  d.delta_a.assign(g.edges.size(), 0.0);
  d.budget = budget_fraction * static_cast<double>(g.edges.size());
  return d;
}

bool AdaptationDeltas::feasible(double tol) const {
  double total = 0.0;
  for (double v : delta_a) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    total += v;
  }
  return total <= budget + tol && delta_x.all_finite();
}

Matrix apply_feature_delta(const Matrix& x, const AdaptationDeltas& deltas) {
  return x + deltas.delta_x;
}

ad::Var apply_feature_delta(ad::Var x, ad::Var delta_x) { return ad::add(x, delta_x); }

std::vector<double> apply_structure_delta(const TargetGraph& g, const AdaptationDeltas& deltas) {
  if (deltas.delta_a.size() != g.edges.size())
    throw ContractError("apply_structure_delta: " + std::to_string(deltas.delta_a.size()) +
                        " mask entries for " + std::to_string(g.edges.size()) + " edges");
  std::vector<double> w(deltas.delta_a.size());
  for (std::size_t e = 0; e < w.size(); ++e) w[e] = 1.0 - deltas.delta_a[e];
  return w;
}

ad::Var apply_structure_delta(ad::Var delta_a) { return ad::affine(delta_a, -1.0, 1.0); }

ConfidentSet select_confident(const Matrix& p, double omega) {
  if (!(omega > 0.0 && omega < 1.0)) throw ContractError("select_confident: omega outside (0, 1)");
  ConfidentSet set;
  set.threshold = omega;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const std::size_t c = row_argmax(p.row(i));
    if (p(i, c) > omega) {
      set.nodes.push_back(i);
      set.labels.push_back(c);
    }
  }
  return set;
}

std::vector<std::size_t> ContrastSets::negatives(std::size_t i) const {
  std::vector<std::size_t> out;
  const auto& pos = positives[i];
  for (std::size_t j = 0; j < bank_class.size(); ++j) {
    if (j == i || bank_class[j] == anchor_class[i]) continue;
    if (std::find(pos.begin(), pos.end(), j) != pos.end()) continue;
    out.push_back(j);
  }
  return out;
}

std::vector<std::vector<std::size_t>> knn_positives(const Matrix& z, const MemoryBanks& banks,
                                                    std::size_t k) {
  const std::size_t n = banks.repr.rows();
  if (k < 1 || k >= n)
    throw ContractError("knn_positives: K=" + std::to_string(k) + " must satisfy 1 <= K < n=" +
                        std::to_string(n));
  if (z.rows() != n || z.cols() != banks.repr.cols())
    throw ShapeError("knn_positives: representations " + z.shape_string() + " vs bank " +
                     banks.repr.shape_string());
  const Matrix zn = l2_normalize_rows(z);
  const Matrix fn = l2_normalize_rows(banks.repr);
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    scored.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) scored.emplace_back(dot(zn.row(i), fn.row(j)), j);
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    out[i].reserve(k);
    for (std::size_t r = 0; r < k; ++r) out[i].push_back(scored[r].second);
  }
  return out;
}

ContrastSets label_negatives(const Matrix& p, const MemoryBanks& banks,
                             std::vector<std::vector<std::size_t>> positives) {
  if (p.rows() != banks.pred.rows() || positives.size() != p.rows())
    throw ShapeError("label_negatives: predictions, bank and positives disagree on n");
  ContrastSets sets;
  sets.positives = std::move(positives);
  sets.anchor_class = row_argmax(p);
  sets.bank_class = row_argmax(banks.pred);
  return sets;
}

namespace {

// Per-node target T_i such that sum_i <zn_i, T_i> is the contrastive part of
// the loss. Negative sums come from per-class totals instead of explicit lists.
Matrix contrast_targets(const Matrix& fn, const ContrastSets& sets, double alpha, double beta) {
  const std::size_t n = fn.rows();
  const std::size_t h = fn.cols();
  std::size_t num_classes = 0;
  for (std::size_t c : sets.bank_class) num_classes = std::max(num_classes, c + 1);
  for (std::size_t c : sets.anchor_class) num_classes = std::max(num_classes, c + 1);
  Matrix class_sum(num_classes, h);
  std::vector<double> total(h, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    auto src = fn.row(j);
    auto dst = class_sum.row(sets.bank_class[j]);
    for (std::size_t t = 0; t < h; ++t) {
      dst[t] += src[t];
      total[t] += src[t];
    }
  }
  Matrix target(n, h);
  for (std::size_t i = 0; i < n; ++i) {
    auto out = target.row(i);
    const std::size_t a = sets.anchor_class[i];
    if (beta != 0.0) {
      auto same = class_sum.row(a);
      for (std::size_t t = 0; t < h; ++t) out[t] = beta * (total[t] - same[t]);
      if (sets.bank_class[i] != a)
        for (std::size_t t = 0; t < h; ++t) out[t] -= beta * fn(i, t);
    }
    for (std::size_t j : sets.positives[i]) {
      const double coef = -alpha - (beta != 0.0 && sets.bank_class[j] != a ? beta : 0.0);
      for (std::size_t t = 0; t < h; ++t) out[t] += coef * fn(j, t);
    }
  }
  return target;
}

}  // namespace

ad::Var loss_graph(ad::Var p, ad::Var z, const MemoryBanks& banks, const ConfidentSet& conf,
                   const ContrastSets& sets, double alpha, double beta) {
  if (!(alpha >= 0.0 && beta >= 0.0)) throw ContractError("loss_graph: alpha and beta must be >= 0");
  const std::size_t n = z.rows();
  if (p.rows() != n || banks.repr.rows() != n || banks.repr.cols() != z.cols() ||
      sets.positives.size() != n || sets.bank_class.size() != n || sets.anchor_class.size() != n)
    throw ShapeError("loss_graph: inputs disagree on the number of nodes or hidden size");
  ad::Tape& tape = *z.tape;

  ad::Var contrast = ad::sum(ad::hadamard(
      ad::l2_normalize_rows(z),
      tape.constant(contrast_targets(l2_normalize_rows(banks.repr), sets, alpha, beta))));
  if (conf.nodes.empty()) return contrast;

  Matrix weight(n, 1);
  std::vector<std::size_t> cls(n, 0);
  const double inv = 1.0 / static_cast<double>(conf.nodes.size());
  for (std::size_t r = 0; r < conf.nodes.size(); ++r) {
    weight(conf.nodes[r], 0) = inv;
    cls[conf.nodes[r]] = conf.labels[r];
  }
  ad::Var log_p = ad::pick(ad::log_clamped(p, 1e-12), cls);
  ad::Var ce = ad::scale(ad::sum(ad::hadamard(log_p, tape.constant(std::move(weight)))), -1.0);
  return ad::add(ce, contrast);
}

double loss_graph(const Matrix& p, const Matrix& z, const MemoryBanks& banks,
                  const ConfidentSet& conf, const ContrastSets& sets, double alpha, double beta) {
  ad::Tape tape;
  return loss_graph(tape.constant(p), tape.constant(z), banks, conf, sets, alpha, beta).value()(0, 0);
}

std::vector<double> project_budget(std::span<const double> v, double budget) {
  if (!(budget >= 0.0)) throw ContractError("project_budget: budget must be >= 0");
  auto clipped_sum = [&v](double shift) {
    double s = 0.0;
    for (double x : v) s += std::clamp(x - shift, 0.0, 1.0);
    return s;
  };
  auto clip_shifted = [&v](double shift) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp(v[i] - shift, 0.0, 1.0);
    return out;
  };
  if (clipped_sum(0.0) <= budget) return clip_shifted(0.0);

  // g(shift) = clipped_sum(shift) - budget is non-increasing; g(lo) > 0 >= g(hi).
  double lo = 0.0;
  double hi = *std::max_element(v.begin(), v.end());
  double g_hi = clipped_sum(hi) - budget;
  for (int iter = 0; iter < 200 && g_hi < -1e-9 && hi - lo > 1e-15; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double g = clipped_sum(mid) - budget;
    if (g > 0.0) {
      lo = mid;
    } else {
      hi = mid;
      g_hi = g;
    }
  }
  return clip_shifted(hi);
}

void pgd_step_structure(AdaptationDeltas& deltas, std::span<const double> grad, double eta) {
  if (!(eta >= 0.0)) throw ContractError("pgd_step_structure: eta must be >= 0");
  if (grad.size() != deltas.delta_a.size())
    throw ShapeError("pgd_step_structure: gradient length does not match the mask");
  std::vector<double> stepped(grad.size());
  for (std::size_t e = 0; e < grad.size(); ++e) stepped[e] = deltas.delta_a[e] - eta * grad[e];
  deltas.delta_a = project_budget(stepped, deltas.budget);
}

void feature_gd_step(AdaptationDeltas& deltas, const Matrix& grad, double eta) {
  if (!(eta >= 0.0)) throw ContractError("feature_gd_step: eta must be >= 0");
  if (!grad.same_shape(deltas.delta_x))
    throw ShapeError("feature_gd_step: gradient " + grad.shape_string() + " vs delta " +
                     deltas.delta_x.shape_string());
  for (std::size_t i = 0; i < grad.size(); ++i) deltas.delta_x[i] -= eta * grad[i];
}

TargetGraph finalize_structure(const TargetGraph& g, const AdaptationDeltas& deltas,
                               std::uint64_t seed) {
  if (deltas.delta_a.size() != g.edges.size())
    throw ContractError("finalize_structure: mask does not align with edges");
  if (!deltas.feasible()) throw ContractError("finalize_structure: deltas are infeasible");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  TargetGraph out = g;
  out.edges.clear();
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (unif(rng) < 1.0 - deltas.delta_a[e]) out.edges.push_back(g.edges[e]);
  if (!deltas.delta_x.empty()) out.features = apply_feature_delta(g.features, deltas);
  return out;
}

void save_mask(const std::vector<double>& delta_a, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[32];
  for (double v : delta_a) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf << '\n';
  }
}

std::vector<double> load_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> mask;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(line.data() + first, line.data() + last + 1, v);
    if (ec != std::errc() || ptr != line.data() + last + 1 || !(v >= 0.0 && v <= 1.0))
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected a mask value in [0, 1]");
    mask.push_back(v);
  }
  return mask;
}

}  // namespace sfgda
