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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sfgda/errors.hpp"
#include "sfgda/memory_banks.hpp"
#include "test_util.hpp"

namespace sfgda {
namespace {

using testing::random_matrix;

Matrix random_stochastic(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  return row_softmax(random_matrix(n, c, rng, -3.0, 3.0));
}

TEST(Sharpen, Examples) {
  EXPECT_EQ(sharpen(Matrix{{0, 1, 0}}), (Matrix{{0, 1, 0}}));
  EXPECT_EQ(sharpen(Matrix{{0.5, 0.5}}), (Matrix{{0.5, 0.5}}));
  Matrix s = sharpen(Matrix{{0.6, 0.4}});
  EXPECT_NEAR(s(0, 0), 0.36 / 0.52, 1e-15);
  EXPECT_NEAR(s(0, 1), 0.16 / 0.52, 1e-15);
}

TEST(InitBanks, CopiesRepresentationsAndSharpenedPredictions) {
  std::mt19937_64 rng(31);
  ForwardOutput fo{random_matrix(4, 3, rng), random_stochastic(4, 2, rng)};
  MemoryBanks b = init_banks(fo, 0.9);
  EXPECT_EQ(b.repr, fo.z);
  EXPECT_EQ(b.pred, sharpen(fo.p));
  EXPECT_EQ(b.momentum, 0.9);
  EXPECT_THROW(init_banks(fo, 1.5), ContractError);
  EXPECT_THROW(init_banks(fo, -0.1), ContractError);
}

TEST(MomentumUpdate, Endpoints) {
  std::mt19937_64 rng(32);
  ForwardOutput first{random_matrix(5, 3, rng), random_stochastic(5, 4, rng)};
  ForwardOutput next{random_matrix(5, 3, rng), random_stochastic(5, 4, rng)};

  MemoryBanks replace = init_banks(first, 1.0);
  momentum_update(replace, next);
  EXPECT_EQ(replace.repr, next.z);
  EXPECT_EQ(replace.pred, sharpen(next.p));

  MemoryBanks frozen = init_banks(first, 0.0);
  const MemoryBanks before = frozen;
  momentum_update(frozen, next);
  EXPECT_EQ(frozen.repr, before.repr);
  EXPECT_EQ(frozen.pred, before.pred);
}

TEST(MomentumUpdate, WeightsTheIncomingValue) {
  MemoryBanks b{Matrix{{1, 0}}, Matrix{{1, 0}}, 0.9};
  momentum_update(b, ForwardOutput{Matrix{{0, 1}}, Matrix{{0, 1}}});
  EXPECT_NEAR(b.repr(0, 0), 0.1, 1e-15);
  EXPECT_NEAR(b.repr(0, 1), 0.9, 1e-15);
  EXPECT_NEAR(b.pred(0, 0), 0.1, 1e-15);
  EXPECT_NEAR(b.pred(0, 1), 0.9, 1e-15);
}

TEST(MomentumUpdate, ShapeMismatch) {
  MemoryBanks b{Matrix(2, 3), Matrix{{1, 0}, {0, 1}}, 0.5};
  EXPECT_THROW(momentum_update(b, ForwardOutput{Matrix(3, 3), Matrix(3, 2, 0.5)}), ShapeError);
  EXPECT_THROW(momentum_update(b, ForwardOutput{Matrix(2, 3), Matrix(2, 3, 1.0 / 3)}), ShapeError);
}

// Every representation entry stays between the running min and max of what it has seen.
TEST(MomentumUpdate, RepresentationStaysInObservedHull) {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> gamma(0.0, 1.0);
  ForwardOutput fo{random_matrix(6, 4, rng), random_stochastic(6, 3, rng)};
  MemoryBanks b = init_banks(fo, gamma(rng));
  Matrix lo = fo.z, hi = fo.z;
  for (int step = 0; step < 200; ++step) {
    b.momentum = gamma(rng);
    ForwardOutput next{random_matrix(6, 4, rng, -5.0, 5.0), random_stochastic(6, 3, rng)};
    momentum_update(b, next);
    for (std::size_t k = 0; k < lo.size(); ++k) {
      lo[k] = std::min(lo[k], next.z[k]);
      hi[k] = std::max(hi[k], next.z[k]);
      EXPECT_GE(b.repr[k], lo[k] - 1e-12);
      EXPECT_LE(b.repr[k], hi[k] + 1e-12);
    }
  }
}

}  // namespace
}  // namespace sfgda
