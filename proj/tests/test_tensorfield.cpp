// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpose/tensorfield.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tensorpose/checkpoint.hpp"

namespace tensorpose {
namespace {

// Direct evaluation of the VM sum at an integer site, written independently
// of the storage helpers.
double vm_triple_loop(const VMTensor3D& t, std::size_t i, std::size_t j, std::size_t k) {
  const std::size_t R = t.rank;
  const auto& d = t.dims;
  double s = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    s += t.vec[0][i * R + r] * t.mat[0][(j * d[2] + k) * R + r];
    s += t.vec[1][j * R + r] * t.mat[1][(i * d[2] + k) * R + r];
    s += t.vec[2][k * R + r] * t.mat[2][(i * d[1] + j) * R + r];
  }
  return s;
}

std::array<double, 3> random_point(const Dims3& d, Rng& rng) {
  return {uniform01(rng) * (d[0] - 1), uniform01(rng) * (d[1] - 1), uniform01(rng) * (d[2] - 1)};
}

TEST(VMTensor, RejectsZeroSizes) {
  EXPECT_THROW(VMTensor3D({4, 0, 4}, 2), std::invalid_argument);
  EXPECT_THROW(VMTensor3D({4, 4, 4}, 0), std::invalid_argument);
  Rng rng(1);
  EXPECT_THROW(init_random({4, 4, 4}, 0, 0.1, rng), std::invalid_argument);
}

TEST(VMTensor, ZeroScaleGivesZeroField) {
  Rng rng = make_substream(1, "init");
  const auto t = init_random({5, 4, 3}, 3, 0.0, rng);
  for (double v : reconstruct_dense(t).data) EXPECT_EQ(v, 0.0);
}

TEST(VMTensor, InitIsDeterministicPerSeed) {
  Rng a = make_substream(9, "init"), b = make_substream(9, "init");
  const auto ta = init_random({4, 5, 6}, 2, 0.3, a);
  const auto tb = init_random({4, 5, 6}, 2, 0.3, b);
  for (std::size_t ax = 0; ax < 3; ++ax) {
    EXPECT_EQ(ta.vec[ax], tb.vec[ax]);
    EXPECT_EQ(ta.mat[ax], tb.mat[ax]);
  }
}

TEST(VMTensor, InitVarianceMatchesComposition) {
  // Each dense entry is a sum of 3R products of independent N(0, s^2)
  // factors, so Var = 3 R s^4.
  const double s = 0.1;
  const std::size_t R = 4;
  const double expected_var = 3.0 * R * std::pow(s, 4);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Rng rng = make_substream(seed, "init");
    const auto dense = reconstruct_dense(init_random({8, 8, 8}, R, s, rng));
    for (double v : dense.data) {
      acc += v * v;
      ++n;
    }
  }
  EXPECT_NEAR(acc / n / expected_var, 1.0, 0.08);
}

TEST(VMTensor, OneHotComponentsGiveSingleNonzero) {
  VMTensor3D t({4, 3, 2}, 1);
  t.v(0, 2, 0) = 1.0;
  t.m(0, 1, 1, 0) = 1.0;  // (j, k) = (1, 1)
  const auto dense = reconstruct_dense(t);
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 2; ++k)
        if (dense.at(i, j, k) != 0.0) {
          ++nonzero;
          EXPECT_EQ(i, 2u);
          EXPECT_EQ(j, 1u);
          EXPECT_EQ(k, 1u);
        }
  EXPECT_EQ(nonzero, 1u);
}

TEST(VMTensor, DenseMatchesTripleLoop) {
  Rng rng = make_substream(5, "init");
  const auto t = init_random({4, 3, 2}, 2, 1.0, rng);
  const auto dense = reconstruct_dense(t);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 2; ++k)
        EXPECT_NEAR(dense.at(i, j, k), vm_triple_loop(t, i, j, k), 1e-14);
}

TEST(VMTensor, DenseRefusesHugeGrids) {
  VMTensor3D t({1, 1, 1}, 1);
  t.dims = {1024, 1024, 1024};  // shape lie; refused before any access
  EXPECT_THROW(reconstruct_dense(t), std::length_error);
}

TEST(SampleDensity, IntegerLatticeEqualsDense) {
  Rng rng = make_substream(2, "init");
  const auto t = init_random({5, 6, 4}, 3, 1.0, rng);
  const auto dense = reconstruct_dense(t);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t k = 0; k < 4; ++k)
        EXPECT_NEAR(sample_density(t, {double(i), double(j), double(k)}), dense.at(i, j, k), 1e-13);
}

TEST(SampleDensity, CellCenterIsCornerMean) {
  Rng rng = make_substream(3, "init");
  const auto t = init_random({3, 3, 3}, 2, 1.0, rng);
  const auto dense = reconstruct_dense(t);
  double mean = 0.0;
  for (int di = 0; di < 2; ++di)
    for (int dj = 0; dj < 2; ++dj)
      for (int dk = 0; dk < 2; ++dk) mean += dense.at(1 + di, 0 + dj, 1 + dk) / 8.0;
  EXPECT_NEAR(sample_density(t, {1.5, 0.5, 1.5}), mean, 1e-13);
}

TEST(SampleDensity, MatchesTrilinearOfDense) {
  Rng rng = make_substream(4, "init");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = static_cast<std::size_t>(trial);
    const Dims3 d{3 + k % 5, 4 + k % 3, 2 + k % 4};
    const auto t = init_random(d, 1 + trial % 4, 1.0, rng);
    const auto dense = reconstruct_dense(t);
    for (int q = 0; q < 20; ++q) {
      const auto p = random_point(d, rng);
      const double ref = trilinear(dense, p);
      EXPECT_NEAR(sample_density(t, p), ref, 1e-10 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST(SampleDensity, ClampsOutsideTheGrid) {
  Rng rng = make_substream(6, "init");
  const auto t = init_random({4, 4, 4}, 2, 1.0, rng);
  EXPECT_EQ(sample_density(t, {-3.0, 1.5, 9.0}), sample_density(t, {0.0, 1.5, 3.0}));
}

TEST(SampleDensity, LinearUnderConcatenation) {
  Rng rng = make_substream(7, "init");
  const Dims3 d{5, 4, 6};
  const auto t1 = init_random(d, 2, 1.0, rng);
  const auto t2 = init_random(d, 3, 1.0, rng);
  const double alpha = 0.7, beta = -1.9;
  const auto sum = concat(t1, alpha, t2, beta);
  for (int q = 0; q < 50; ++q) {
    const auto p = random_point(d, rng);
    EXPECT_NEAR(sample_density(sum, p),
                alpha * sample_density(t1, p) + beta * sample_density(t2, p), 1e-12);
  }
}

TEST(SampleDensity, QueryCostIsLinearInRank) {
  Rng rng = make_substream(8, "init");
  for (std::size_t R : {1u, 4u, 16u}) {
    const auto t = init_random({32, 32, 32}, R, 1.0, rng);
    detail::component_reads() = 0;
    sample_density(t, {3.3, 17.2, 30.9});
    EXPECT_EQ(detail::component_reads(), 18 * R);
  }
}

TEST(SampleFeature, UnitBasisReducesToDensity) {
  Rng rng = make_substream(9, "init");
  FeatureTensor3D f({4, 5, 3}, 3, 1);
  f.comps = init_random({4, 5, 3}, 3, 1.0, rng);
  for (auto& b : f.basis) std::fill(b.begin(), b.end(), 1.0);
  for (int q = 0; q < 20; ++q) {
    const auto p = random_point(f.dims(), rng);
    EXPECT_NEAR(sample_feature(f, p)[0], sample_density(f.comps, p), 1e-13);
  }
}

TEST(SampleFeature, OneHotReturnsScaledBasis) {
  FeatureTensor3D f({3, 3, 3}, 1, 4);
  f.comps.v(1, 1, 0) = 1.0;  // y-vector hot at j = 1
  f.comps.m(1, 0, 2, 0) = 1.0;  // xz plane hot at (i, k) = (0, 2)
  for (std::size_t g = 0; g < 4; ++g) f.b(1, 0, g) = g + 1.0;
  // query at (0.25, 1, 2): weight (1 - 0.25) * 1 * 1 from the x interpolation
  const auto feat = sample_feature(f, {0.25, 1.0, 2.0});
  for (std::size_t g = 0; g < 4; ++g) EXPECT_NEAR(feat[g], 0.75 * (g + 1.0), 1e-15);
}

TEST(SampleFeature, MatchesDenseFourAxisOracle) {
  Rng rng = make_substream(10, "init");
  const Dims3 d{4, 3, 5};
  const auto f = init_random_feature(d, 3, 4, 1.0, 1.0, rng);
  const auto dense = reconstruct_dense(f);
  for (int q = 0; q < 30; ++q) {
    const auto p = random_point(d, rng);
    const auto feat = sample_feature(f, p);
    for (std::size_t g = 0; g < 4; ++g) {
      DenseGrid3D slice(d);
      for (std::size_t i = 0; i < d[0]; ++i)
        for (std::size_t j = 0; j < d[1]; ++j)
          for (std::size_t k = 0; k < d[2]; ++k) slice.at(i, j, k) = dense.at(i, j, k, g);
      EXPECT_NEAR(feat[g], trilinear(slice, p), 1e-12);
    }
  }
}

TEST(Sample2D, MatchesBilinearOfDense) {
  Rng rng = make_substream(11, "init");
  const auto t = init_random_2d(9, 7, 4, 3, 1.0, rng);
  const Image dense = reconstruct_dense(t);
  // integer coordinates are exact
  for (std::size_t y = 0; y < 7; ++y)
    for (std::size_t x = 0; x < 9; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_NEAR(sample2d(t, double(x), double(y))[c], dense.at(x, y, c), 1e-13);
  // cell midpoint is the corner average
  const auto mid = sample2d(t, 2.5, 3.5);
  EXPECT_NEAR(mid[1], 0.25 * (dense.at(2, 3, 1) + dense.at(3, 3, 1) + dense.at(2, 4, 1) + dense.at(3, 4, 1)),
              1e-13);
  for (int q = 0; q < 50; ++q) {
    const double x = uniform01(rng) * 8, y = uniform01(rng) * 6;
    double ref[3];
    sample_bilinear(dense, x, y, ref);
    const auto v = sample2d(t, x, y);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(v[c], ref[c], 1e-12);
  }
}

TEST(Upsample, SameDimsIsBitIdentical) {
  Rng rng = make_substream(12, "init");
  const auto t = init_random({5, 4, 3}, 2, 1.0, rng);
  const auto u = upsample(t, t.dims);
  for (std::size_t a = 0; a < 3; ++a) {
    EXPECT_EQ(u.vec[a], t.vec[a]);
    EXPECT_EQ(u.mat[a], t.mat[a]);
  }
  EXPECT_THROW(upsample(t, {4, 4, 3}), std::invalid_argument);
}

TEST(Upsample, ConstantFieldPreservedExactly) {
  VMTensor3D t({3, 4, 5}, 2);
  for (std::size_t a = 0; a < 3; ++a) {
    std::fill(t.vec[a].begin(), t.vec[a].end(), 0.3);
    std::fill(t.mat[a].begin(), t.mat[a].end(), -1.7);
  }
  const double c = reconstruct_dense(t).data[0];
  for (double v : reconstruct_dense(upsample(t, {7, 9, 11})).data) EXPECT_EQ(v, c);
}

TEST(Upsample, RampEndpointsPreserved) {
  VMTensor3D t({4, 2, 2}, 1);
  for (std::size_t i = 0; i < 4; ++i) t.v(0, i, 0) = 2.0 * i + 1.0;  // 1, 3, 5, 7
  const auto u = upsample(t, {8, 2, 2});
  EXPECT_EQ(u.v(0, 0, 0), 1.0);
  EXPECT_EQ(u.v(0, 7, 0), 7.0);
  // align-corners resampling of a ramp stays a ramp: slope 6/7 per index
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(u.v(0, i, 0), 1.0 + 6.0 * i / 7.0, 1e-14);
}

TEST(Upsample, FieldAgreesAtNormalizedCoordinates) {
  Rng rng = make_substream(13, "init");
  // smooth components: low-order polynomials in the index are reproduced
  // exactly by linear resampling when they are linear
  VMTensor3D t({4, 4, 4}, 1);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < 4; ++i) t.v(a, i, 0) = 0.5 + 0.25 * i;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) t.m(a, i, j, 0) = 1.0 + 0.1 * i - 0.2 * j;
  }
  const auto u = upsample(t, {7, 10, 13});
  for (int q = 0; q < 20; ++q) {
    const std::array<double, 3> n{uniform01(rng), uniform01(rng), uniform01(rng)};
    const double a = sample_density(t, {n[0] * 3, n[1] * 3, n[2] * 3});
    const double b = sample_density(u, {n[0] * 6, n[1] * 9, n[2] * 12});
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng = make_substream(14, "init");
  const auto vm = init_random({5, 3, 4}, 3, 1.0, rng);
  const auto feat = init_random_feature({2, 6, 3}, 2, 5, 1.0, 1.0, rng);
  const auto t2 = init_random_2d(7, 4, 2, 3, 1.0, rng);
  const std::string dir = ::testing::TempDir();

  save_checkpoint(dir + "/vm.tpck", vm);
  save_checkpoint(dir + "/feat.tpck", feat);
  save_checkpoint(dir + "/t2.tpck", t2);
  const auto vm2 = load_vm_checkpoint(dir + "/vm.tpck");
  const auto feat2 = load_feature_checkpoint(dir + "/feat.tpck");
  const auto t22 = load_2d_checkpoint(dir + "/t2.tpck");

  EXPECT_EQ(vm2.dims, vm.dims);
  for (std::size_t a = 0; a < 3; ++a) {
    EXPECT_EQ(vm2.vec[a], vm.vec[a]);
    EXPECT_EQ(vm2.mat[a], vm.mat[a]);
    EXPECT_EQ(feat2.comps.mat[a], feat.comps.mat[a]);
    EXPECT_EQ(feat2.basis[a], feat.basis[a]);
  }
  EXPECT_EQ(t22.vx, t2.vx);
  EXPECT_EQ(t22.vy, t2.vy);
  EXPECT_THROW(load_2d_checkpoint(dir + "/vm.tpck"), std::runtime_error);
}

}  // namespace
}  // namespace tensorpose
