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

#include "sfgda/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sfgda/errors.hpp"

namespace sfgda {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() +
                   " and " + b.shape_string());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (!same_shape(other)) shape_mismatch("add", *this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  if (!same_shape(other)) shape_mismatch("sub", *this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix SparseAdjacency::to_dense() const {
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k)
      d(i, col_indices[k]) = values[k];
  return d;
}

void SparseAdjacency::validate() const {
  if (row_offsets.size() != n + 1 || row_offsets.front() != 0 ||
      row_offsets.back() != col_indices.size() || values.size() != col_indices.size()) {
    throw ContractError("SparseAdjacency: inconsistent CSR array lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (row_offsets[i] > row_offsets[i + 1])
      throw ContractError("SparseAdjacency: row offsets decrease at row " + std::to_string(i));
    for (std::size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k) {
      if (col_indices[k] >= n)
        throw ContractError("SparseAdjacency: column index out of range in row " +
                            std::to_string(i));
      if (k > row_offsets[i] && col_indices[k] <= col_indices[k - 1])
        throw ContractError("SparseAdjacency: row " + std::to_string(i) +
                            " is not strictly increasing");
    }
  }
}

SparseAdjacency sparse_from_triplets(std::size_t n, std::vector<std::size_t> rows,
                                     std::vector<std::size_t> cols,
                                     std::vector<double> values) {
  if (rows.size() != cols.size() || rows.size() != values.size())
    throw ShapeError("sparse_from_triplets: triplet arrays differ in length");
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rows[a] != rows[b] ? rows[a] < rows[b] : cols[a] < cols[b];
  });
  SparseAdjacency adj;
  adj.n = n;
  adj.row_offsets.assign(n + 1, 0);
  adj.col_indices.reserve(order.size());
  adj.values.reserve(order.size());
  for (std::size_t idx : order) {
    if (rows[idx] >= n || cols[idx] >= n)
      throw ContractError("sparse_from_triplets: index out of range");
    ++adj.row_offsets[rows[idx] + 1];
    adj.col_indices.push_back(cols[idx]);
    adj.values.push_back(values[idx]);
  }
  for (std::size_t i = 0; i < n; ++i) adj.row_offsets[i + 1] += adj.row_offsets[i];
  adj.validate();
  return adj;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data().data() + i * m;
    for (std::size_t k = 0; k < inner; ++k) {
      const double s = a(i, k);
      if (s == 0.0) continue;
      const double* br = b.data().data() + k * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) shape_mismatch("matmul_nt", a, b);
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) shape_mismatch("matmul_tn", a, b);
  Matrix out(a.cols(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* br = b.data().data() + k * m;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = a(k, i);
      if (s == 0.0) continue;
      double* o = out.data().data() + i * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
    }
  }
  return out;
}

Matrix spmm(const SparseAdjacency& adj, const Matrix& x) {
  if (adj.n != x.rows())
    throw ShapeError("spmm: adjacency of size " + std::to_string(adj.n) +
                     " cannot multiply " + x.shape_string());
  Matrix out(x.rows(), x.cols());
  const std::size_t m = x.cols();
  for (std::size_t i = 0; i < adj.n; ++i) {
    double* o = out.data().data() + i * m;
    for (std::size_t k = adj.row_offsets[i]; k < adj.row_offsets[i + 1]; ++k) {
      const double w = adj.values[k];
      const double* xr = x.data().data() + adj.col_indices[k] * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += w * xr[j];
    }
  }
  return out;
}

Matrix spmm_transposed(const SparseAdjacency& adj, const Matrix& x) {
  if (adj.n != x.rows())
    throw ShapeError("spmm_transposed: adjacency of size " + std::to_string(adj.n) +
                     " cannot multiply " + x.shape_string());
  Matrix out(x.rows(), x.cols());
  const std::size_t m = x.cols();
  for (std::size_t i = 0; i < adj.n; ++i) {
    const double* xr = x.data().data() + i * m;
    for (std::size_t k = adj.row_offsets[i]; k < adj.row_offsets[i + 1]; ++k) {
      const double w = adj.values[k];
      double* o = out.data().data() + adj.col_indices[k] * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += w * xr[j];
    }
  }
  return out;
}

Matrix row_softmax(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

Matrix l2_normalize_rows(const Matrix& a, double eps) {
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double norm = l2_norm(a.row(i));
    if (norm < eps) continue;
    for (double& v : out.row(i)) v /= norm;
  }
  return out;
}

std::size_t row_argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

std::vector<std::size_t> row_argmax(const Matrix& a) {
  std::vector<std::size_t> out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = row_argmax(a.row(i));
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b, double eps) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na < eps || nb < eps) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace sfgda
