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

#include "sfgda/gnn.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>

#include "sfgda/errors.hpp"

namespace sfgda {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void GnnModel::validate() const {
  if (layer_weights.empty()) throw ContractError("GnnModel: at least one layer required");
  const std::size_t h = layer_weights.front().cols();
  for (std::size_t l = 0; l < layer_weights.size(); ++l) {
    const Matrix& w = layer_weights[l];
    if (w.cols() != h || (l > 0 && w.rows() != h))
      throw ShapeError("GnnModel: layer " + std::to_string(l) + " has shape " + w.shape_string());
  }
  if (classifier_weight.rows() != h)
    throw ShapeError("GnnModel: classifier " + classifier_weight.shape_string() +
                     " does not follow hidden size " + std::to_string(h));
  if (classifier_bias.rows() != 1 || classifier_bias.cols() != classifier_weight.cols())
    throw ShapeError("GnnModel: bias " + classifier_bias.shape_string() + " does not fit classifier");
  for (const Matrix* p : parameters())
    if (!p->all_finite()) throw NumericalError("GnnModel: non-finite parameter");
}

std::vector<Matrix*> GnnModel::parameters() {
  std::vector<Matrix*> out;
  for (Matrix& w : layer_weights) out.push_back(&w);
  out.push_back(&classifier_weight);
  out.push_back(&classifier_bias);
  return out;
}

std::vector<const Matrix*> GnnModel::parameters() const {
  std::vector<const Matrix*> out;
  for (const Matrix& w : layer_weights) out.push_back(&w);
  out.push_back(&classifier_weight);
  out.push_back(&classifier_bias);
  return out;
}

GnnModel init_model(std::size_t d, std::size_t h, std::size_t c, std::size_t num_layers,
                    std::uint64_t seed) {
  if (d == 0 || h == 0 || c == 0 || num_layers == 0)
    throw ContractError("init_model: d, h, C and L must be positive");
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    Matrix w(fan_in, fan_out);
    for (double& v : w.data()) v = dist(rng);
    return w;
  };
  GnnModel m;
  for (std::size_t l = 0; l < num_layers; ++l) m.layer_weights.push_back(glorot(l == 0 ? d : h, h));
  m.classifier_weight = glorot(h, c);
  m.classifier_bias = Matrix(1, c);
  return m;
}

std::vector<ad::Var> ModelVars::all() const {
  std::vector<ad::Var> out(layer_weights.begin(), layer_weights.end());
  out.push_back(classifier_weight);
  out.push_back(classifier_bias);
  return out;
}

ModelVars record_model(ad::Tape& tape, const GnnModel& m, bool trainable) {
  auto rec = [&](const Matrix& w) { return trainable ? tape.leaf(w) : tape.constant(w); };
  ModelVars vars;
  for (const Matrix& w : m.layer_weights) vars.layer_weights.push_back(rec(w));
  vars.classifier_weight = rec(m.classifier_weight);
  vars.classifier_bias = rec(m.classifier_bias);
  return vars;
}

ForwardVars forward(const ModelVars& m, const SparseAdjacency& pattern, ad::Var adj_values,
                    ad::Var x) {
  if (m.layer_weights.empty()) throw ContractError("forward: model has no layers");
  if (x.rows() != pattern.n)
    throw ShapeError("forward: features " + x.value().shape_string() + " for a graph of " +
                     std::to_string(pattern.n) + " nodes");
  if (x.cols() != m.layer_weights.front().rows())
    throw ShapeError("forward: features " + x.value().shape_string() + " do not match input size " +
                     std::to_string(m.layer_weights.front().rows()));
  ad::Var h = x;
  for (const ad::Var& w : m.layer_weights) h = ad::relu(ad::spmm(pattern, adj_values, ad::matmul(h, w)));
  ad::Var logits = ad::add_row_bias(ad::matmul(h, m.classifier_weight), m.classifier_bias);
  return {h, ad::row_softmax(logits)};
}

ForwardOutput forward(const GnnModel& m, const SparseAdjacency& adj_hat, const Matrix& x) {
  ad::Tape tape;
  ModelVars vars = record_model(tape, m, false);
  ad::Var values = tape.constant(Matrix(adj_hat.nnz(), 1, adj_hat.values));
  ForwardVars out = forward(vars, adj_hat, values, tape.constant(x));
  return {out.z.value(), out.p.value()};
}

std::vector<std::size_t> predict(const GnnModel& m, const SparseAdjacency& adj_hat,
                                 const Matrix& x) {
  return row_argmax(forward(m, adj_hat, x).p);
}

Adam::Adam(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (lr < 0.0 || weight_decay < 0.0) throw ContractError("Adam: lr and weight decay must be >= 0");
}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw ShapeError("Adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    Matrix& p = *params[b];
    if (!p.same_shape(grads[b]) || !p.same_shape(m_[b]))
      throw ShapeError("Adam: gradient " + grads[b].shape_string() + " for parameter " +
                       p.shape_string());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grads[b][i] + weight_decay_ * p[i];
      m_[b][i] = beta1_ * m_[b][i] + (1.0 - beta1_) * g;
      v_[b][i] = beta2_ * v_[b][i] + (1.0 - beta2_) * g * g;
      p[i] -= lr_ * (m_[b][i] / c1) / (std::sqrt(v_[b][i] / c2) + eps_);
    }
  }
}

namespace {

double accuracy_on(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& labels,
                   const std::vector<std::size_t>& nodes) {
  if (nodes.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i : nodes) hit += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(nodes.size());
}

}  // namespace

PretrainResult pretrain_source(GnnModel m, const TargetGraph& source, const SplitMask& split,
                               const PretrainOptions& options) {
  if (!source.has_labels()) throw ContractError("pretrain_source: source graph has no labels");
  m.validate();
  if (m.input_dim() != source.feature_dim() || m.num_classes() != source.num_classes)
    throw ShapeError("pretrain_source: model dimensions do not match the source graph");
  const auto& labels = *source.labels;
  const SparseAdjacency adj = normalize_adjacency(source);

  PretrainResult result;
  auto evaluate = [&](const GnnModel& model) { return predict(model, adj, source.features); };
  result.model = m;
  result.val_accuracy = accuracy_on(evaluate(m), labels, split.val);

  std::vector<std::size_t> train_labels;
  for (std::size_t i : split.train) train_labels.push_back(labels[i]);
  const double inv_train = split.train.empty() ? 0.0 : 1.0 / static_cast<double>(split.train.size());

  Adam opt(options.lr, options.weight_decay);
  for (std::size_t epoch = 1; epoch <= options.epochs && !split.train.empty(); ++epoch) {
    ad::Tape tape;
    ModelVars vars = record_model(tape, m, true);
    ad::Var values = tape.constant(Matrix(adj.nnz(), 1, adj.values));
    ForwardVars out = forward(vars, adj, values, tape.constant(source.features));
    ad::Var log_p = ad::log_clamped(ad::gather_rows(out.p, split.train), 1e-12);
    ad::Var loss = ad::scale(ad::sum(ad::pick(log_p, train_labels)), -inv_train);
    tape.backward(loss);
    const double loss_value = loss.value()(0, 0);
    if (!std::isfinite(loss_value)) throw NumericalError("pretrain_source: non-finite loss");
    result.loss_trace.push_back(loss_value);

    std::vector<Matrix> grads;
    for (const ad::Var& v : vars.all()) grads.push_back(v.grad());
    opt.step(m.parameters(), grads);

    const double val = accuracy_on(evaluate(m), labels, split.val);
    if (val >= result.val_accuracy) {
      result.val_accuracy = val;
      result.model = m;
      result.best_epoch = epoch;
    }
  }
  const auto pred = evaluate(result.model);
  result.train_accuracy = accuracy_on(pred, labels, split.train);
  result.test_accuracy = accuracy_on(pred, labels, split.test);
  return result;
}

namespace {

constexpr std::array<char, 4> kMagic = {'G', 'C', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw IoError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const GnnModel& m, const std::filesystem::path& path) {
  m.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.num_layers()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.input_dim()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.hidden_dim()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.num_classes()));
  for (const Matrix* p : m.parameters())
    out.write(reinterpret_cast<const char*>(p->data().data()),
              static_cast<std::streamsize>(p->size() * sizeof(double)));
  if (!out) throw IoError("failed writing " + path.string());
}

GnnModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw IoError(path.string() + " is not a checkpoint file");
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion)
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto layers = read_pod<std::uint32_t>(in, path);
  const auto d = read_pod<std::uint32_t>(in, path);
  const auto h = read_pod<std::uint32_t>(in, path);
  const auto c = read_pod<std::uint32_t>(in, path);
  if (layers == 0 || d == 0 || h == 0 || c == 0)
    throw IoError(path.string() + ": invalid checkpoint dimensions");
  GnnModel m;
  for (std::uint32_t l = 0; l < layers; ++l) m.layer_weights.emplace_back(l == 0 ? d : h, h);
  m.classifier_weight = Matrix(h, c);
  m.classifier_bias = Matrix(1, c);
  for (Matrix* p : m.parameters())
    if (!in.read(reinterpret_cast<char*>(p->data().data()),
                 static_cast<std::streamsize>(p->size() * sizeof(double))))
      throw IoError("truncated checkpoint " + path.string());
  if (in.peek() != std::ifstream::traits_type::eof())
    throw IoError(path.string() + ": trailing bytes after parameters");
  m.validate();
  return m;
}

}  // namespace sfgda
