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

#include "sfgda/memory_banks.hpp"

#include "sfgda/errors.hpp"

namespace sfgda {

Matrix sharpen(const Matrix& p) {
  Matrix out(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    auto in = p.row(i);
    auto o = out.row(i);
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = in[c] * in[c];
      total += o[c];
    }
    if (total > 0.0)
      for (double& v : o) v /= total;
  }
  return out;
}

MemoryBanks init_banks(const ForwardOutput& fo, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0))
    throw ContractError("init_banks: momentum must lie in [0, 1]");
  if (fo.z.rows() != fo.p.rows()) throw ShapeError("init_banks: Z and P row counts differ");
  return MemoryBanks{fo.z, sharpen(fo.p), momentum};
}

void momentum_update(MemoryBanks& banks, const ForwardOutput& fo) {
  if (!banks.repr.same_shape(fo.z) || !banks.pred.same_shape(fo.p))
    throw ShapeError("momentum_update: banks " + banks.repr.shape_string() + "/" +
                     banks.pred.shape_string() + " vs outputs " + fo.z.shape_string() + "/" +
                     fo.p.shape_string());
  const double keep = 1.0 - banks.momentum;
  const double take = banks.momentum;
  for (std::size_t i = 0; i < banks.repr.size(); ++i)
    banks.repr[i] = keep * banks.repr[i] + take * fo.z[i];
  const Matrix sharp = sharpen(fo.p);
  for (std::size_t i = 0; i < banks.pred.size(); ++i)
    banks.pred[i] = keep * banks.pred[i] + take * sharp[i];
}

}  // namespace sfgda
