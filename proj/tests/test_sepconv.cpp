// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpose/sepconv.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace tensorpose {
namespace {

// O(n L) double loop written straight from the definition of zero-padded
// same convolution.
std::vector<double> conv1d_oracle(const std::vector<double>& x, const std::vector<double>& k) {
  const long n = static_cast<long>(x.size()), L = static_cast<long>(k.size()), c = L / 2;
  std::vector<double> y(x.size(), 0.0);
  for (long i = 0; i < n; ++i)
    for (long t = 0; t < L; ++t) {
      const long j = i - (t - c);
      if (j >= 0 && j < n) y[i] += k[t] * x[j];
    }
  return y;
}

std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = normal01(rng);
  return v;
}

double dense_from_view(const DenseGrid3D& a, std::size_t i, std::size_t j, std::size_t k) {
  return a.at(i, j, k);
}

TEST(Convolve1D, ImpulseKernelIsIdentity) {
  Rng rng = make_substream(1, "t");
  const auto x = random_vector(17, rng);
  EXPECT_EQ(convolve_same_1d(x, make_kernel_1d(0.0, 7)), x);
  EXPECT_EQ(convolve_same_1d(x, make_kernel_1d(0.0, 1)), x);
}

TEST(Convolve1D, ImpulseSignalReproducesClippedKernel) {
  const auto k = make_kernel_1d(1.0, 5);
  std::vector<double> e(8, 0.0);
  e[1] = 1.0;
  const auto y = convolve_same_1d(e, k);
  // kernel centered at index 1; the tap at offset -2 falls off the border
  EXPECT_EQ(y[0], k.weights[1]);
  EXPECT_EQ(y[1], k.weights[2]);
  EXPECT_EQ(y[2], k.weights[3]);
  EXPECT_EQ(y[3], k.weights[4]);
  EXPECT_EQ(y[4], 0.0);
}

TEST(Convolve1D, MatchesDoubleLoopOracle) {
  Rng rng = make_substream(2, "t");
  for (std::size_t n : {1u, 2u, 5u, 31u}) {
    for (double sigma : {0.5, 1.2, 3.0}) {
      const auto k = make_kernel_1d(sigma, 9);
      const auto x = random_vector(n, rng);
      const auto y = convolve_same_1d(x, k);
      const auto ref = conv1d_oracle(x, k.weights);
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y[i], ref[i], 1e-14);
    }
  }
  EXPECT_THROW(convolve_same_1d(std::vector<double>{}, make_kernel_1d(1.0, 3)), std::invalid_argument);
}

TEST(Convolve2D, SeparablePassesMatchDenseOracle) {
  Rng rng = make_substream(3, "t");
  Matrix m(13, 9);
  for (double& v : m.data) v = normal01(rng);
  for (double sigma : {0.0, 0.6, 1.7}) {
    const auto k = make_kernel_1d(sigma, 7);
    const Matrix a = convolve_same_2d(m, k);
    const Matrix b = brute_force_conv2d(m, outer_product(k));
    for (std::size_t i = 0; i < m.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-13);
  }
  const Matrix id = convolve_same_2d(m, make_kernel_1d(0.0, 5));
  EXPECT_EQ(id.data, m.data);
}

TEST(Convolve2D, NormalizedKernelKeepsConstantInterior) {
  Matrix m(20, 20, 2.5);
  const auto k = make_kernel_1d(1.0, 7, /*normalize=*/true);
  const Matrix a = convolve_same_2d(m, k);
  for (std::size_t i = 3; i < 17; ++i)
    for (std::size_t j = 3; j < 17; ++j) EXPECT_NEAR(a(i, j), 2.5, 1e-14);
  // the raw clamped kernel scales the interior by its squared mass
  const auto raw = make_kernel_1d(1.0, 7);
  const Matrix b = convolve_same_2d(m, raw);
  EXPECT_NEAR(b(10, 10), 2.5 * raw.mass() * raw.mass(), 1e-14);
}

TEST(Filter3D, ImpulseKernelIsBitIdentical) {
  Rng rng = make_substream(4, "t");
  const auto t = init_random({6, 5, 4}, 3, 1.0, rng);
  const auto view = filter_components_3d(t, make_kernel_1d(5e-5, 5));
  for (std::size_t a = 0; a < 3; ++a) {
    EXPECT_EQ(view.filtered.vec[a], t.vec[a]);
    EXPECT_EQ(view.filtered.mat[a], t.mat[a]);
  }
  EXPECT_EQ(view.source, &t);
}

TEST(Filter3D, OneHotRankOneGivesKernelStamp) {
  VMTensor3D t({9, 9, 9}, 1);
  t.v(0, 4, 0) = 1.0;
  t.m(0, 3, 5, 0) = 1.0;  // hot site (4, 3, 5)
  const auto k = make_kernel_1d(1.1, 5);
  const auto dense = reconstruct_dense(filter_components_3d(t, k).filtered);
  for (long i = 0; i < 9; ++i)
    for (long j = 0; j < 9; ++j)
      for (long kk = 0; kk < 9; ++kk) {
        const long di = i - 4 + 2, dj = j - 3 + 2, dk = kk - 5 + 2;
        const bool in = di >= 0 && di < 5 && dj >= 0 && dj < 5 && dk >= 0 && dk < 5;
        const double expect = in ? k.weights[di] * k.weights[dj] * k.weights[dk] : 0.0;
        EXPECT_NEAR(dense.at(i, j, kk), expect, 1e-16);
      }
}

TEST(Filter3D, EquivalentToBruteForceConvolution) {
  Rng rng = make_substream(5, "t");
  for (double sigma : {0.5, 1.2, 2.0}) {
    for (std::size_t L : {3u, 5u, 7u}) {
      const Dims3 d{3 + rng() % 14, 3 + rng() % 14, 3 + rng() % 14};
      const std::size_t R = 1 + rng() % 4;
      const auto t = init_random(d, R, 1.0, rng);
      const auto k = make_kernel_1d(sigma, L);
      const auto fast = reconstruct_dense(filter_components_3d(t, k).filtered);
      const auto slow = brute_force_conv3d(reconstruct_dense(t), make_kernel_3d(k));
      EXPECT_LE(max_abs_diff(fast, slow), 1e-10) << "sigma=" << sigma << " L=" << L;
      EXPECT_TRUE(filter_components_3d(t, k).filtered.same_shape(t));
    }
  }
}

TEST(Filter3D, FeatureTensorFiltersComponentsNotBasis) {
  Rng rng = make_substream(6, "t");
  const auto f = init_random_feature({6, 7, 5}, 2, 3, 1.0, 1.0, rng);
  const auto k = make_kernel_1d(0.9, 5);
  const auto view = filter_components_3d(f, k);
  for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(view.filtered.basis[a], f.basis[a]);
  const auto fast = reconstruct_dense(view.filtered);
  const auto dense = reconstruct_dense(f);
  const auto k3 = make_kernel_3d(k);
  for (std::size_t g = 0; g < 3; ++g) {
    DenseGrid3D slice(f.dims()), fslice(f.dims());
    for (std::size_t n = 0; n < slice.data.size(); ++n) {
      slice.data[n] = dense.data[n * 3 + g];
      fslice.data[n] = fast.data[n * 3 + g];
    }
    EXPECT_LE(max_abs_diff(fslice, brute_force_conv3d(slice, k3)), 1e-10);
  }
}

TEST(Filter3D, CommutesWithConcatenation) {
  Rng rng = make_substream(7, "t");
  const Dims3 d{6, 6, 6};
  const auto a = init_random(d, 2, 1.0, rng), b = init_random(d, 1, 1.0, rng);
  const auto k = make_kernel_1d(1.3, 5);
  const auto lhs = reconstruct_dense(filter_components_3d(concat(a, 2.0, b, -0.5), k).filtered);
  const auto fa = reconstruct_dense(filter_components_3d(a, k).filtered);
  const auto fb = reconstruct_dense(filter_components_3d(b, k).filtered);
  for (std::size_t n = 0; n < lhs.data.size(); ++n)
    EXPECT_NEAR(lhs.data[n], 2.0 * fa.data[n] - 0.5 * fb.data[n], 1e-12);
}

TEST(Filter3D, LongKernelIsAllowedWithWarning) {
  Rng rng = make_substream(8, "t");
  mute_warnings(true);
  const auto t = init_random({3, 4, 5}, 1, 1.0, rng);
  const auto before = warning_count();
  const auto k = make_kernel_1d(2.0, 9);
  const auto fast = reconstruct_dense(filter_components_3d(t, k).filtered);
  EXPECT_GT(warning_count(), before);
  EXPECT_LE(max_abs_diff(fast, brute_force_conv3d(reconstruct_dense(t), make_kernel_3d(k))), 1e-10);
  mute_warnings(false);
}

TEST(Filter3D, AdjointIsTranspose) {
  // <filter(x), y> == <x, adjoint(y)>
  Rng rng = make_substream(9, "t");
  const Dims3 d{5, 6, 7};
  const auto x = init_random(d, 2, 1.0, rng), y = init_random(d, 2, 1.0, rng);
  const auto k = make_kernel_1d(1.4, 7);
  const auto fx = filter_components_3d(x, k).filtered;
  const auto aty = filter_components_adjoint(y, k);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t n = 0; n < fx.vec[a].size(); ++n) lhs += fx.vec[a][n] * y.vec[a][n];
    for (std::size_t n = 0; n < fx.mat[a].size(); ++n) lhs += fx.mat[a][n] * y.mat[a][n];
    for (std::size_t n = 0; n < x.vec[a].size(); ++n) rhs += x.vec[a][n] * aty.vec[a][n];
    for (std::size_t n = 0; n < x.mat[a].size(); ++n) rhs += x.mat[a][n] * aty.mat[a][n];
  }
  EXPECT_NEAR(lhs, rhs, 1e-11 * std::abs(lhs));
}

TEST(BruteForce3D, ImpulseOneHotAndLinearity) {
  Rng rng = make_substream(10, "t");
  DenseGrid3D g({5, 6, 4});
  for (double& v : g.data) v = normal01(rng);
  EXPECT_EQ(brute_force_conv3d(g, make_kernel_3d(make_kernel_1d(0.0, 3))).data, g.data);

  DenseGrid3D hot({7, 7, 7});
  hot.at(3, 3, 3) = 1.0;
  const auto k3 = make_kernel_3d(make_kernel_1d(0.8, 5));
  const auto stamp = brute_force_conv3d(hot, k3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 5; ++k)
        EXPECT_EQ(dense_from_view(stamp, i + 1, j + 1, k + 1), k3.at(i, j, k));

  DenseGrid3D scaled = g;
  for (double& v : scaled.data) v *= -3.0;
  const auto a = brute_force_conv3d(scaled, k3), b = brute_force_conv3d(g, k3);
  for (std::size_t n = 0; n < a.data.size(); ++n) EXPECT_NEAR(a.data[n], -3.0 * b.data[n], 1e-13);
}

TEST(Filter2D, MatchesDenseOracleOnRank3Image) {
  Rng rng = make_substream(11, "t");
  const auto t = init_random_2d(64, 48, 3, 3, 1.0, rng);
  const auto k = make_kernel_1d(1.6, 9);
  const Image fast = reconstruct_dense(filter_components_2d(t, k).filtered);
  const Image slow = brute_force_conv_image(reconstruct_dense(t), outer_product(k));
  double worst = 0.0;
  for (std::size_t n = 0; n < fast.data.size(); ++n)
    worst = std::max(worst, std::abs(fast.data[n] - slow.data[n]));
  EXPECT_LE(worst, 1e-10);
  EXPECT_EQ(filter_components_2d(t, make_kernel_1d(0.0, 9)).filtered.vx, t.vx);
}

TEST(Filter2D, LinearInTensor) {
  Rng rng = make_substream(12, "t");
  auto t = init_random_2d(20, 10, 2, 1, 1.0, rng);
  const auto k = make_kernel_1d(1.0, 5);
  const Image a = reconstruct_dense(filter_components_2d(t, k).filtered);
  for (double& v : t.vx) v *= 4.0;
  const Image b = reconstruct_dense(filter_components_2d(t, k).filtered);
  for (std::size_t n = 0; n < a.data.size(); ++n) EXPECT_NEAR(b.data[n], 4.0 * a.data[n], 1e-12);
}

TEST(ImageConvolution, MatchesBruteForce) {
  Rng rng = make_substream(13, "t");
  Image img(11, 8, 3);
  for (double& v : img.data) v = uniform01(rng);
  const auto k = make_kernel_1d(1.3, 7);
  const Image a = convolve_image(img, k);
  const Image b = brute_force_conv_image(img, outer_product(k));
  for (std::size_t n = 0; n < a.data.size(); ++n) EXPECT_NEAR(a.data[n], b.data[n], 1e-13);
}

TEST(Bench, OpCountsFollowClosedForms) {
  EXPECT_EQ(componentwise_op_count({32, 32, 32}, 4, 9), 4.0 * 3 * 32 * 32 * 9);
  EXPECT_EQ(bruteforce_op_count({32, 32, 32}, 9), 32.0 * 32 * 32 * 729);
  EXPECT_EQ(componentwise_op_count({2, 3, 5}, 1, 3), 2 * 3 * 3 + 3 * 5 * 3 + 5 * 2 * 3);
  const auto rep = bench_compare({8, 8, 8}, 2, 1, 3);
  EXPECT_EQ(rep.ops_bruteforce, 512.0);
  EXPECT_GT(rep.bruteforce_seconds, 0.0);
  EXPECT_NE(rep.csv_row().find("8,8,8,2,1,3"), std::string::npos);
}

}  // namespace
}  // namespace tensorpose
