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

#include "sfgda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sfgda/errors.hpp"

namespace sfgda::ad {

const Matrix& Var::value() const { return tape->value(id); }
const Matrix& Var::grad() const { return tape->grad(id); }

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward_fn) {
  bool needs = false;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw ContractError("Tape::record: operand is not on this tape");
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, std::move(inputs),
                        needs ? std::move(backward_fn) : BackwardFn{}, needs});
  return {this, nodes_.size() - 1};
}

const Matrix& Tape::grad(std::size_t id) const {
  // Lazily materialized zeros for nodes the sweep never touched.
  auto& node = const_cast<Node&>(nodes_[id]);
  if (!node.value.same_shape(node.grad)) node.grad = Matrix(node.value.rows(), node.value.cols());
  return node.grad;
}

Matrix& Tape::grad_buffer(std::size_t id) {
  auto& node = nodes_[id];
  if (!node.value.same_shape(node.grad)) node.grad = Matrix(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(Var output) {
  if (output.tape != this) throw ContractError("backward: output belongs to a different tape");
  const Matrix& out = nodes_[output.id].value;
  if (out.rows() != 1 || out.cols() != 1)
    throw ContractError("backward: output must be 1x1, got " + out.shape_string());
  for (auto& node : nodes_) node.grad = Matrix();
  grad_buffer(output.id)(0, 0) = 1.0;
  for (std::size_t k = output.id + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!node.requires_grad || !node.backward_fn || node.grad.empty()) continue;
    node.backward_fn(*this, k);
  }
}

namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw ContractError("operation on an unrecorded Var");
  return *a.tape;
}

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
}

// Accumulates into operand `id` only when it participates in differentiation.
template <typename Fn>
void accumulate(Tape& t, std::size_t id, Fn&& fn) {
  if (t.requires_grad(id)) fn(t.grad_buffer(id));
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tape& t = tape_of(a);
  return t.record(a.value() + b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    accumulate(t, a, [&](Matrix& ga) { ga += g; });
    accumulate(t, b, [&](Matrix& gb) { gb += g; });
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tape& t = tape_of(a);
  return t.record(a.value() - b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    accumulate(t, a, [&](Matrix& ga) { ga += g; });
    accumulate(t, b, [&](Matrix& gb) { gb -= g; });
  });
}

Var scale(Var a, double s) { return affine(a, s, 0.0); }

Var affine(Var a, double s, double shift) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (double& v : out.data()) v = s * v + shift;
  return t.record(std::move(out), {a.id}, [a = a.id, s](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    accumulate(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
  });
}

Var hadamard(Var a, Var b) {
  check_same_tape(a, b);
  require_same_shape("hadamard", a.value(), b.value());
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& va = t.value(a);
    const Matrix& vb = t.value(b);
    accumulate(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    });
    accumulate(t, b, [&](Matrix& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    });
  });
}

Var add_row_bias(Var a, Var bias) {
  check_same_tape(a, bias);
  const Matrix& va = a.value();
  const Matrix& vb = bias.value();
  if (vb.rows() != 1 || vb.cols() != va.cols())
    throw ShapeError("add_row_bias: bias " + vb.shape_string() + " does not fit " +
                     va.shape_string());
  Matrix out = va;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += vb(0, j);
  Tape& t = tape_of(a);
  return t.record(std::move(out), {a.id, bias.id}, [a = a.id, b = bias.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    accumulate(t, a, [&](Matrix& ga) { ga += g; });
    accumulate(t, b, [&](Matrix& gb) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
    });
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = tape_of(a);
  return t.record(sfgda::matmul(a.value(), b.value()), {a.id, b.id},
                  [a = a.id, b = b.id](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    accumulate(t, a, [&](Matrix& ga) { ga += matmul_nt(g, t.value(b)); });
                    accumulate(t, b, [&](Matrix& gb) { gb += matmul_tn(t.value(a), g); });
                  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = tape_of(a);
  return t.record(sfgda::matmul_nt(a.value(), b.value()), {a.id, b.id},
                  [a = a.id, b = b.id](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    // out = A B^T: dA = G B, dB = G^T A
                    accumulate(t, a, [&](Matrix& ga) { ga += sfgda::matmul(g, t.value(b)); });
                    accumulate(t, b, [&](Matrix& gb) { gb += matmul_tn(g, t.value(a)); });
                  });
}

Var spmm(const SparseAdjacency& pattern, Var values, Var x) {
  check_same_tape(values, x);
  const Matrix& vals = values.value();
  if (vals.rows() != pattern.nnz() || vals.cols() != 1)
    throw ShapeError("spmm: values " + vals.shape_string() + " do not match " +
                     std::to_string(pattern.nnz()) + " stored entries");
  SparseAdjacency adj = pattern;
  adj.values = vals.data();
  Matrix out = sfgda::spmm(adj, x.value());
  Tape& t = tape_of(x);
  return t.record(std::move(out), {values.id, x.id},
                  [adj = std::move(adj), v = values.id, x = x.id](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    accumulate(t, x, [&](Matrix& gx) { gx += spmm_transposed(adj, g); });
                    accumulate(t, v, [&](Matrix& gv) {
                      const Matrix& xv = t.value(x);
                      for (std::size_t i = 0; i < adj.n; ++i)
                        for (std::size_t k = adj.row_offsets[i]; k < adj.row_offsets[i + 1]; ++k)
                          gv(k, 0) += dot(g.row(i), xv.row(adj.col_indices[k]));
                    });
                  });
}

Var spmm(const SparseAdjacency& adj, Var x) {
  Tape& t = tape_of(x);
  Var values = t.constant(Matrix(adj.nnz(), 1, adj.values));
  return spmm(adj, values, x);
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& va = t.value(a);
    accumulate(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (va[i] > 0.0) ga[i] += g[i];
    });
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    accumulate(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
  });
}

Var log_clamped(Var a, double floor) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (double& v : out.data()) v = std::log(std::max(v, floor));
  return t.record(std::move(out), {a.id}, [a = a.id, floor](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& va = t.value(a);
    accumulate(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (va[i] > floor) ga[i] += g[i] / va[i];
    });
  });
}

Var row_softmax(Var a) {
  Tape& t = tape_of(a);
  return t.record(sfgda::row_softmax(a.value()), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& p = t.value(self);
    accumulate(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < p.rows(); ++i) {
        const double gp = dot(g.row(i), p.row(i));
        for (std::size_t j = 0; j < p.cols(); ++j) ga(i, j) += p(i, j) * (g(i, j) - gp);
      }
    });
  });
}

Var l2_normalize_rows(Var a, double eps) {
  if (!(eps > 0.0)) throw ContractError("l2_normalize_rows: eps must be positive");
  Tape& t = tape_of(a);
  const Matrix& va = a.value();
  std::vector<double> norms(va.rows());
  for (std::size_t i = 0; i < va.rows(); ++i) norms[i] = l2_norm(va.row(i));
  return t.record(
      sfgda::l2_normalize_rows(va, eps), {a.id},
      [a = a.id, norms = std::move(norms), eps](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& y = t.value(self);
        accumulate(t, a, [&](Matrix& ga) {
          for (std::size_t i = 0; i < y.rows(); ++i) {
            if (norms[i] < eps) {
              for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += g(i, j);
              continue;
            }
            const double gy = dot(g.row(i), y.row(i));
            for (std::size_t j = 0; j < y.cols(); ++j)
              ga(i, j) += (g(i, j) - y(i, j) * gy) / norms[i];
          }
        });
      });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(Matrix(1, 1, s), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    accumulate(t, a, [&](Matrix& ga) {
      for (double& v : ga.data()) v += g;
    });
  });
}

Var row_sum(Var a) {
  Tape& t = tape_of(a);
  const Matrix& va = a.value();
  Matrix out(va.rows(), 1);
  for (std::size_t i = 0; i < va.rows(); ++i)
    for (double v : va.row(i)) out(i, 0) += v;
  return t.record(std::move(out), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    accumulate(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (double& v : ga.row(i)) v += g(i, 0);
    });
  });
}

Var pick(Var a, std::span<const std::size_t> columns) {
  const Matrix& va = a.value();
  if (columns.size() != va.rows())
    throw ShapeError("pick: " + std::to_string(columns.size()) + " column indices for " +
                     va.shape_string());
  Matrix out(va.rows(), 1);
  for (std::size_t i = 0; i < va.rows(); ++i) {
    if (columns[i] >= va.cols()) throw ShapeError("pick: column index out of range");
    out(i, 0) = va(i, columns[i]);
  }
  Tape& t = tape_of(a);
  return t.record(std::move(out), {a.id},
                  [a = a.id, cols = std::vector<std::size_t>(columns.begin(), columns.end())](
                      Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    accumulate(t, a, [&](Matrix& ga) {
                      for (std::size_t i = 0; i < cols.size(); ++i) ga(i, cols[i]) += g(i, 0);
                    });
                  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Matrix& va = a.value();
  Matrix out(rows.size(), va.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= va.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy(va.row(rows[r]).begin(), va.row(rows[r]).end(), out.row(r).begin());
  }
  Tape& t = tape_of(a);
  return t.record(std::move(out), {a.id},
                  [a = a.id, idx = std::vector<std::size_t>(rows.begin(), rows.end())](
                      Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    accumulate(t, a, [&](Matrix& ga) {
                      for (std::size_t r = 0; r < idx.size(); ++r)
                        for (std::size_t j = 0; j < g.cols(); ++j) ga(idx[r], j) += g(r, j);
                    });
                  });
}

Var hconcat(Var a, Var b) {
  check_same_tape(a, b);
  const Matrix& va = a.value();
  const Matrix& vb = b.value();
  if (va.rows() != vb.rows())
    throw ShapeError("hconcat: incompatible shapes " + va.shape_string() + " and " +
                     vb.shape_string());
  Matrix out(va.rows(), va.cols() + vb.cols());
  for (std::size_t i = 0; i < va.rows(); ++i) {
    std::copy(va.row(i).begin(), va.row(i).end(), out.row(i).begin());
    std::copy(vb.row(i).begin(), vb.row(i).end(), out.row(i).begin() + va.cols());
  }
  Tape& t = tape_of(a);
  const std::size_t split = va.cols();
  return t.record(std::move(out), {a.id, b.id},
                  [a = a.id, b = b.id, split](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    accumulate(t, a, [&](Matrix& ga) {
                      for (std::size_t i = 0; i < ga.rows(); ++i)
                        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(i, j);
                    });
                    accumulate(t, b, [&](Matrix& gb) {
                      for (std::size_t i = 0; i < gb.rows(); ++i)
                        for (std::size_t j = 0; j < gb.cols(); ++j) gb(i, j) += g(i, split + j);
                    });
                  });
}

Var masked_row_logsumexp(Var a, const Matrix& mask) {
  const Matrix& va = a.value();
  require_same_shape("masked_row_logsumexp", va, mask);
  Matrix out(va.rows(), 1);
  for (std::size_t i = 0; i < va.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < va.cols(); ++j)
      if (mask(i, j) > 0.0) mx = std::max(mx, va(i, j));
    if (!std::isfinite(mx))
      throw ContractError("masked_row_logsumexp: row " + std::to_string(i) + " is fully masked");
    double s = 0.0;
    for (std::size_t j = 0; j < va.cols(); ++j)
      if (mask(i, j) > 0.0) s += mask(i, j) * std::exp(va(i, j) - mx);
    out(i, 0) = mx + std::log(s);
  }
  Tape& t = tape_of(a);
  return t.record(std::move(out), {a.id}, [a = a.id, mask](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    const Matrix& va = t.value(a);
    accumulate(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < va.rows(); ++i)
        for (std::size_t j = 0; j < va.cols(); ++j)
          if (mask(i, j) > 0.0) ga(i, j) += g(i, 0) * mask(i, j) * std::exp(va(i, j) - y(i, 0));
    });
  });
}

std::vector<Matrix> gradients(const RecordedFunction& f, const std::vector<Matrix>& point,
                              double* value_out) {
  Tape tape;
  std::vector<Var> inputs;
  inputs.reserve(point.size());
  for (const Matrix& m : point) inputs.push_back(tape.leaf(m));
  Var out = f(tape, inputs);
  tape.backward(out);
  if (value_out != nullptr) *value_out = out.value()(0, 0);
  std::vector<Matrix> grads;
  grads.reserve(inputs.size());
  for (Var v : inputs) grads.push_back(v.grad());
  return grads;
}

double grad_check(const RecordedFunction& f, const std::vector<Matrix>& point, double step) {
  if (!(step > 0.0 && step <= 1e-2))
    throw ContractError("grad_check: step must lie in (0, 1e-2]");
  const std::vector<Matrix> analytic = gradients(f, point);
  auto evaluate = [&f](const std::vector<Matrix>& at) {
    Tape tape;
    std::vector<Var> inputs;
    inputs.reserve(at.size());
    for (const Matrix& m : at) inputs.push_back(tape.constant(m));
    return f(tape, inputs).value()(0, 0);
  };
  std::vector<Matrix> probe = point;
  double worst = 0.0;
  for (std::size_t b = 0; b < probe.size(); ++b) {
    for (std::size_t k = 0; k < probe[b].size(); ++k) {
      const double x0 = probe[b][k];
      probe[b][k] = x0 + step;
      const double up = evaluate(probe);
      probe[b][k] = x0 - step;
      const double down = evaluate(probe);
      probe[b][k] = x0;
      const double numeric = (up - down) / (2.0 * step);
      const double exact = analytic[b][k];
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace sfgda::ad
