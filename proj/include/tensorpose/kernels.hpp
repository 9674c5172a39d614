// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "tensorpose/random.hpp"

namespace tensorpose {

/// Widths below this produce the discrete impulse instead of a sampled pdf.
inline constexpr double kImpulseSigma = 1e-4;

/// Discretely sampled Gaussian with every tap clamped to at most 1.
struct GaussianKernel1D {
  double sigma = 0.0;
  std::vector<double> weights{1.0};

  std::size_t length() const { return weights.size(); }
  std::size_t center() const { return weights.size() / 2; }
  bool is_impulse() const { return sigma < kImpulseSigma; }
  double mass() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

/// Row-major square weight grid produced by the outer product of two 1D kernels.
struct KernelGrid2D {
  std::size_t size = 1;
  std::vector<double> weights{1.0};

  double at(std::size_t i, std::size_t j) const { return weights[i * size + j]; }
};

/// Samples min(1, N(x; 0, sigma)) at integer offsets x = -L/2 .. L/2.
/// With normalize=true the taps are rescaled to unit sum (off by default).
inline GaussianKernel1D make_kernel_1d(double sigma, std::size_t length,
                                       bool normalize = false) {
  if (length == 0 || length % 2 == 0)
    throw std::invalid_argument("kernel length must be odd and positive");
  if (!(sigma >= 0.0)) throw std::invalid_argument("kernel sigma must be >= 0");

  GaussianKernel1D k;
  k.sigma = sigma;
  k.weights.assign(length, 0.0);
  const auto half = static_cast<long>(length / 2);
  if (sigma < kImpulseSigma) {
    k.weights[static_cast<std::size_t>(half)] = 1.0;
    return k;
  }
  constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;
  for (long i = 0; i <= half; ++i) {
    const double x = static_cast<double>(i);
    const double pdf = kInvSqrt2Pi / sigma * std::exp(-x * x / (2.0 * sigma * sigma));
    const double w = std::min(1.0, pdf);
    k.weights[static_cast<std::size_t>(half + i)] = w;
    k.weights[static_cast<std::size_t>(half - i)] = w;
  }
  if (normalize) {
    const double m = k.mass();
    for (double& w : k.weights) w /= m;
  }
  return k;
}

inline KernelGrid2D outer_product(const GaussianKernel1D& k) {
  KernelGrid2D g;
  g.size = k.length();
  g.weights.resize(g.size * g.size);
  for (std::size_t i = 0; i < g.size; ++i)
    for (std::size_t j = 0; j < g.size; ++j)
      g.weights[i * g.size + j] = k.weights[i] * k.weights[j];
  return g;
}

inline KernelGrid2D make_kernel_2d(double sigma, std::size_t length,
                                   bool normalize = false) {
  return outer_product(make_kernel_1d(sigma, length, normalize));
}

/// Unit-sum box filter of odd width. Only used by the low-pass ablation.
inline GaussianKernel1D make_box_kernel_1d(std::size_t length) {
  if (length == 0 || length % 2 == 0)
    throw std::invalid_argument("kernel length must be odd and positive");
  GaussianKernel1D k;
  k.sigma = static_cast<double>(length);
  k.weights.assign(length, 1.0 / static_cast<double>(length));
  return k;
}

/// 2*ceil(3*sigma)+1, clamped to max_length (kept odd). Impulse widths give 1.
inline std::size_t default_kernel_length(double sigma, std::size_t max_length) {
  if (max_length == 0) max_length = 1;
  if (max_length % 2 == 0) --max_length;
  if (!(sigma >= kImpulseSigma)) return 1;
  const double want = 2.0 * std::ceil(3.0 * sigma) + 1.0;
  if (want >= static_cast<double>(max_length)) return max_length;
  return static_cast<std::size_t>(want);
}

/// Gaussian whose length follows default_kernel_length.
inline GaussianKernel1D make_scheduled_kernel(double sigma, std::size_t max_length,
                                              bool normalize = false) {
  return make_kernel_1d(sigma, default_kernel_length(sigma, max_length), normalize);
}

/// Coarse-to-fine width curve: sigma0 * 2^(-step/half_life), forced to exactly
/// zero from cutoff_step onwards.
struct KernelSchedule {
  double sigma0 = 0.0;
  long cutoff_step = 0;
  double half_life = 1.0;
  bool random_scaling = false;
};

inline double schedule_sigma(const KernelSchedule& s, long step) {
  if (step < 0) throw std::invalid_argument("schedule step must be >= 0");
  if (step >= s.cutoff_step || s.sigma0 <= 0.0) return 0.0;
  return s.sigma0 * std::exp2(-static_cast<double>(step) / s.half_life);
}

/// Random kernel scale factor, uniform on [0, 1].
inline double sample_kernel_scale(Rng& rng) { return uniform01(rng); }

}  // namespace tensorpose
