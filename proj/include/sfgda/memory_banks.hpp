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

#include "sfgda/gnn.hpp"
#include "sfgda/matrix.hpp"

namespace sfgda {

/// Per-node running stores of representations and sharpened predictions.
///
/// `momentum` is the weight placed on the incoming value:
/// bank <- (1 - momentum) * bank + momentum * new.
struct MemoryBanks {
  Matrix repr;  // n x h
  Matrix pred;  // n x C, row-stochastic
  double momentum = 0.9;
};

/// Squares every probability and renormalizes each row over classes.
Matrix sharpen(const Matrix& p);

/// First fill copies Z and sharpen(P) directly.
MemoryBanks init_banks(const ForwardOutput& fo, double momentum);

void momentum_update(MemoryBanks& banks, const ForwardOutput& fo);

}  // namespace sfgda
