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
#include <functional>
#include <span>
#include <vector>

#include "sfgda/matrix.hpp"

namespace sfgda::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Linear record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every operand index is lower than
/// the index of the node that consumes it. A tape is rebuilt for every forward
/// pass and never shared between threads.
class Tape {
 public:
  /// Propagates grad_out (the gradient of the node's value) into its operands.
  using BackwardFn = std::function<void(Tape& tape, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Differentiable input.
  Var leaf(Matrix value);
  /// Input that never receives a gradient.
  Var constant(Matrix value);

  /// Appends an operation result. The node requires a gradient if any input does.
  Var record(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward_fn);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient after backward(); a zero matrix for nodes the output does not reach.
  const Matrix& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulation target for an operand's gradient; allocated on first use.
  Matrix& grad_buffer(std::size_t id);

  /// Reverse sweep from a 1x1 output. Clears gradients of any previous sweep.
  void backward(Var output);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward_fn;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

// Primitive operations. Each records one node on the tape of its first operand.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// s * a + shift, elementwise.
Var affine(Var a, double s, double shift);
Var hadamard(Var a, Var b);
/// Adds a 1 x cols row to every row of a.
Var add_row_bias(Var a, Var bias);
Var matmul(Var a, Var b);
/// a * b^T.
Var matmul_nt(Var a, Var b);
/// Sparse pattern with differentiable values (one per stored entry, nnz x 1) times x.
Var spmm(const SparseAdjacency& pattern, Var values, Var x);
/// Sparse matrix with fixed values times x.
Var spmm(const SparseAdjacency& adj, Var x);
/// Subgradient 0 at the kink.
Var relu(Var a);
Var exp(Var a);
/// log(max(a, floor)); no gradient where the floor is active.
Var log_clamped(Var a, double floor);
Var row_softmax(Var a);
/// Rows with norm below eps pass through unchanged (identity gradient).
Var l2_normalize_rows(Var a, double eps = 1e-12);
/// Sum of all entries, 1x1.
Var sum(Var a);
/// Per-row sums, rows x 1.
Var row_sum(Var a);
/// out[i] = a(i, columns[i]), rows x 1.
Var pick(Var a, std::span<const std::size_t> columns);
/// Selected rows in the given order.
Var gather_rows(Var a, std::span<const std::size_t> rows);
/// [a | b] column concatenation.
Var hconcat(Var a, Var b);
/// out[i] = log sum_j mask(i,j) * exp(a(i,j)), computed stably. Each row needs a nonzero mask.
Var masked_row_logsumexp(Var a, const Matrix& mask);

/// A function of several matrices that records its computation and returns a 1x1 Var.
using RecordedFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Central-difference check of backward() at `point`.
///
/// Returns the largest elementwise relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over every entry of
/// every input. Results at non-differentiable points (e.g. a ReLU exactly at 0)
/// are meaningless; callers pick points away from kinks.
double grad_check(const RecordedFunction& f, const std::vector<Matrix>& point, double step);

/// Evaluates f at point and returns the analytic gradients for every input.
std::vector<Matrix> gradients(const RecordedFunction& f, const std::vector<Matrix>& point,
                              double* value_out = nullptr);

}  // namespace sfgda::ad
