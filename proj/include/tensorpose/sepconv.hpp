// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorpose/kernels.hpp"
#include "tensorpose/log.hpp"
#include "tensorpose/random.hpp"
#include "tensorpose/tensorfield.hpp"

namespace tensorpose {

// ---------------------------------------------------------------------------
// Zero-padded "same" convolution along one axis of a (outer, n, inner) block.
//
//   out[o][i][:] = sum_t k[t] * in[o][i - t + c][:]
//
// The transpose (used for backpropagation) correlates instead, which is the
// same operation with the kernel reversed.

inline void convolve_axis(const double* in, double* out, std::size_t outer, std::size_t n,
                          std::size_t inner, std::span<const double> kernel,
                          bool transpose = false) {
  const auto L = static_cast<long>(kernel.size());
  const long c = L / 2;
  const long nn = static_cast<long>(n);
  std::fill(out, out + outer * n * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = in + o * n * inner;
    double* dst = out + o * n * inner;
    for (long i = 0; i < nn; ++i) {
      double* d = dst + static_cast<std::size_t>(i) * inner;
      for (long t = 0; t < L; ++t) {
        const long j = transpose ? i + t - c : i - t + c;
        if (j < 0 || j >= nn) continue;
        const double w = kernel[static_cast<std::size_t>(t)];
        if (w == 0.0) continue;
        const double* s = src + static_cast<std::size_t>(j) * inner;
        for (std::size_t e = 0; e < inner; ++e) d[e] += w * s[e];
      }
    }
  }
}

inline std::vector<double> convolve_same_1d(std::span<const double> signal,
                                            const GaussianKernel1D& kernel) {
  if (signal.empty()) throw std::invalid_argument("convolve_same_1d: empty signal");
  if (kernel.length() % 2 == 0) throw std::invalid_argument("kernel length must be odd");
  std::vector<double> out(signal.size());
  if (kernel.is_impulse() && kernel.length() == 1) {
    std::copy(signal.begin(), signal.end(), out.begin());
    return out;
  }
  convolve_axis(signal.data(), out.data(), 1, signal.size(), 1, kernel.weights);
  return out;
}

/// Row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// Separable 2D filtering: a 1D pass along rows then along columns.
inline Matrix convolve_same_2d(const Matrix& m, const GaussianKernel1D& kernel) {
  if (m.data.empty()) throw std::invalid_argument("convolve_same_2d: empty matrix");
  if (kernel.length() % 2 == 0) throw std::invalid_argument("kernel length must be odd");
  Matrix tmp(m.rows, m.cols), out(m.rows, m.cols);
  convolve_axis(m.data.data(), tmp.data.data(), 1, m.rows, m.cols, kernel.weights);
  convolve_axis(tmp.data.data(), out.data.data(), m.rows, m.cols, 1, kernel.weights);
  return out;
}

/// Direct double-loop 2D convolution with an explicit kernel grid (oracle).
inline Matrix brute_force_conv2d(const Matrix& m, const KernelGrid2D& k) {
  Matrix out(m.rows, m.cols);
  const long c = static_cast<long>(k.size / 2);
  for (long i = 0; i < static_cast<long>(m.rows); ++i)
    for (long j = 0; j < static_cast<long>(m.cols); ++j) {
      double s = 0.0;
      for (long a = 0; a < static_cast<long>(k.size); ++a)
        for (long b = 0; b < static_cast<long>(k.size); ++b) {
          const long ii = i - a + c, jj = j - b + c;
          if (ii < 0 || jj < 0 || ii >= static_cast<long>(m.rows) || jj >= static_cast<long>(m.cols))
            continue;
          s += k.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b)) *
               m(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
        }
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = s;
    }
  return out;
}

/// Same-padded 2D filtering of every channel of an image.
inline Image convolve_image(const Image& img, const GaussianKernel1D& kernel) {
  if (kernel.length() == 1 && kernel.weights[0] == 1.0) return img;
  Image tmp(img.width, img.height, img.channels), out(img.width, img.height, img.channels);
  // rows are (width * channels) contiguous; filter along y then along x
  convolve_axis(img.data.data(), tmp.data.data(), 1, img.height, img.width * img.channels,
                kernel.weights);
  convolve_axis(tmp.data.data(), out.data.data(), img.height, img.width, img.channels,
                kernel.weights);
  return out;
}

/// Direct per-channel 2D convolution of an image (oracle).
inline Image brute_force_conv_image(const Image& img, const KernelGrid2D& k) {
  Image out(img.width, img.height, img.channels);
  for (std::size_t ch = 0; ch < img.channels; ++ch) {
    Matrix m(img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) m(y, x) = img.at(x, y, ch);
    const Matrix f = brute_force_conv2d(m, k);
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(x, y, ch) = f(y, x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Component-wise filtering.

namespace detail {
inline std::atomic<std::uint64_t>& filter_build_counter() {
  static std::atomic<std::uint64_t> n{0};
  return n;
}

inline void warn_if_kernel_exceeds(const Dims3& dims, const GaussianKernel1D& k) {
  const std::size_t smallest = std::min({dims[0], dims[1], dims[2]});
  if (k.length() > smallest) {
    std::ostringstream os;
    os << "kernel length " << k.length() << " exceeds smallest tensor dim " << smallest
       << "; borders are zero-padded";
    log_warning(os.str());
  }
}

/// Filters (or, with transpose, back-propagates through) every component.
inline VMTensor3D filter_vm(const VMTensor3D& t, const GaussianKernel1D& k, bool transpose) {
  if (k.length() == 1 && k.weights[0] == 1.0) return t;
  VMTensor3D out(t.dims, t.rank);
  const std::size_t R = t.rank;
  std::vector<double> tmp;
  for (std::size_t a = 0; a < 3; ++a) {
    convolve_axis(t.vec[a].data(), out.vec[a].data(), 1, t.dims[a], R, k.weights, transpose);
    const auto [p, q] = plane_axes(a);
    tmp.resize(t.mat[a].size());
    convolve_axis(t.mat[a].data(), tmp.data(), 1, t.dims[p], t.dims[q] * R, k.weights, transpose);
    convolve_axis(tmp.data(), out.mat[a].data(), t.dims[p], t.dims[q], R, k.weights, transpose);
  }
  return out;
}
}  // namespace detail

/// Number of FilteredView materializations since program start.
inline std::uint64_t filter_build_count() { return detail::filter_build_counter().load(); }

/// Gaussian-filtered copy of a tensor's components, built once per kernel
/// and shared by every query in an iteration.
template <class Tensor>
struct FilteredView {
  const Tensor* source = nullptr;
  Tensor filtered;
  GaussianKernel1D kernel;

  double sigma() const { return kernel.sigma; }
};

inline FilteredView<VMTensor3D> filter_components_3d(const VMTensor3D& t,
                                                     const GaussianKernel1D& k) {
  if (k.length() % 2 == 0) throw std::invalid_argument("kernel length must be odd");
  detail::warn_if_kernel_exceeds(t.dims, k);
  ++detail::filter_build_counter();
  return {&t, detail::filter_vm(t, k, false), k};
}

/// Feature bases are carried through unfiltered.
inline FilteredView<FeatureTensor3D> filter_components_3d(const FeatureTensor3D& t,
                                                          const GaussianKernel1D& k) {
  if (k.length() % 2 == 0) throw std::invalid_argument("kernel length must be odd");
  detail::warn_if_kernel_exceeds(t.dims(), k);
  ++detail::filter_build_counter();
  FilteredView<FeatureTensor3D> view{&t, t, k};
  view.filtered.comps = detail::filter_vm(t.comps, k, false);
  return view;
}

/// Maps gradients w.r.t. filtered components back onto source components.
inline VMTensor3D filter_components_adjoint(const VMTensor3D& grad_filtered,
                                            const GaussianKernel1D& k) {
  return detail::filter_vm(grad_filtered, k, true);
}

inline FeatureTensor3D filter_components_adjoint(const FeatureTensor3D& grad_filtered,
                                                 const GaussianKernel1D& k) {
  FeatureTensor3D out = grad_filtered;
  out.comps = detail::filter_vm(grad_filtered.comps, k, true);
  return out;
}

namespace detail {
inline Tensor2DFactorized filter_2d(const Tensor2DFactorized& t, const GaussianKernel1D& k,
                                    bool transpose) {
  if (k.length() == 1 && k.weights[0] == 1.0) return t;
  Tensor2DFactorized out(t.width, t.height, t.rank, t.channels);
  convolve_axis(t.vx.data(), out.vx.data(), t.channels, t.width, t.rank, k.weights, transpose);
  convolve_axis(t.vy.data(), out.vy.data(), t.channels, t.height, t.rank, k.weights, transpose);
  return out;
}
}  // namespace detail

inline FilteredView<Tensor2DFactorized> filter_components_2d(const Tensor2DFactorized& t,
                                                             const GaussianKernel1D& k) {
  if (k.length() % 2 == 0) throw std::invalid_argument("kernel length must be odd");
  if (k.length() > std::min(t.width, t.height))
    log_warning("kernel longer than smallest image dim; borders are zero-padded");
  ++detail::filter_build_counter();
  return {&t, detail::filter_2d(t, k, false), k};
}

inline Tensor2DFactorized filter_components_adjoint(const Tensor2DFactorized& grad_filtered,
                                                    const GaussianKernel1D& k) {
  return detail::filter_2d(grad_filtered, k, true);
}

// ---------------------------------------------------------------------------
// Brute-force oracle.

/// Explicit L x L x L kernel k (x) k (x) k.
inline DenseGrid3D make_kernel_3d(const GaussianKernel1D& k) {
  const std::size_t L = k.length();
  DenseGrid3D out({L, L, L});
  for (std::size_t a = 0; a < L; ++a)
    for (std::size_t b = 0; b < L; ++b)
      for (std::size_t c = 0; c < L; ++c) out.at(a, b, c) = k.weights[a] * k.weights[b] * k.weights[c];
  return out;
}

/// Zero-padded same-size 3D convolution by direct six-fold loop,
/// O(I J K L^3).
inline DenseGrid3D brute_force_conv3d(const DenseGrid3D& in, const DenseGrid3D& kernel) {
  const Dims3& d = in.dims;
  const Dims3& kd = kernel.dims;
  if (kd[0] % 2 == 0 || kd[1] % 2 == 0 || kd[2] % 2 == 0)
    throw std::invalid_argument("brute_force_conv3d: kernel dims must be odd");
  DenseGrid3D out(d);
  const long ci = static_cast<long>(kd[0] / 2), cj = static_cast<long>(kd[1] / 2),
             ck = static_cast<long>(kd[2] / 2);
  const long I = static_cast<long>(d[0]), J = static_cast<long>(d[1]), K = static_cast<long>(d[2]);
  for (long i = 0; i < I; ++i)
    for (long j = 0; j < J; ++j)
      for (long k = 0; k < K; ++k) {
        double s = 0.0;
        for (long a = 0; a < static_cast<long>(kd[0]); ++a) {
          const long ii = i - a + ci;
          if (ii < 0 || ii >= I) continue;
          for (long b = 0; b < static_cast<long>(kd[1]); ++b) {
            const long jj = j - b + cj;
            if (jj < 0 || jj >= J) continue;
            for (long c = 0; c < static_cast<long>(kd[2]); ++c) {
              const long kk = k - c + ck;
              if (kk < 0 || kk >= K) continue;
              s += kernel.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b),
                             static_cast<std::size_t>(c)) *
                   in.at(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj),
                         static_cast<std::size_t>(kk));
            }
          }
        }
        out.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
               static_cast<std::size_t>(k)) = s;
      }
  return out;
}

inline double max_abs_diff(const DenseGrid3D& a, const DenseGrid3D& b) {
  if (a.dims != b.dims) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Benchmark.

struct BenchReport {
  Dims3 dims{};
  std::size_t rank = 0;
  std::size_t kernel_length = 0;
  std::size_t repetitions = 0;
  double componentwise_seconds = 0.0;  // median
  double bruteforce_seconds = 0.0;     // median
  double ops_componentwise = 0.0;      // R (IJL + JKL + KIL)
  double ops_bruteforce = 0.0;         // IJK L^3

  double speedup() const {
    return componentwise_seconds > 0.0 ? bruteforce_seconds / componentwise_seconds : 0.0;
  }
  static std::string csv_header() {
    return "I,J,K,rank,kernel_length,repetitions,componentwise_s,bruteforce_s,speedup,"
           "ops_componentwise,ops_bruteforce";
  }
  std::string csv_row() const {
    std::ostringstream os;
    os.precision(9);
    os << dims[0] << ',' << dims[1] << ',' << dims[2] << ',' << rank << ',' << kernel_length << ','
       << repetitions << ',' << componentwise_seconds << ',' << bruteforce_seconds << ','
       << speedup() << ',' << ops_componentwise << ',' << ops_bruteforce;
    return os.str();
  }
};

/// Closed-form operation counts for the two filtering strategies.
inline double componentwise_op_count(const Dims3& d, std::size_t rank, std::size_t L) {
  const double I = static_cast<double>(d[0]), J = static_cast<double>(d[1]),
               K = static_cast<double>(d[2]), l = static_cast<double>(L);
  return static_cast<double>(rank) * (I * J * l + J * K * l + K * I * l);
}
inline double bruteforce_op_count(const Dims3& d, std::size_t L) {
  const double l = static_cast<double>(L);
  return static_cast<double>(d[0]) * static_cast<double>(d[1]) * static_cast<double>(d[2]) * l * l * l;
}

/// Times component-wise filtering against dense reconstruction followed by
/// brute-force 3D convolution. Reports per-arm medians.
inline BenchReport bench_compare(const Dims3& dims, std::size_t rank, std::size_t kernel_length,
                                 std::size_t repetitions, std::uint64_t seed = 0) {
  if (repetitions == 0) repetitions = 1;
  Rng rng = make_substream(seed, "bench");
  const VMTensor3D t = init_random(dims, rank, 1.0, rng);
  const GaussianKernel1D k = make_kernel_1d(1.2, kernel_length);
  const DenseGrid3D k3 = make_kernel_3d(k);

  using clock = std::chrono::steady_clock;
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  std::vector<double> tc, tb;
  double sink = 0.0;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    auto t0 = clock::now();
    const VMTensor3D f = detail::filter_vm(t, k, false);
    auto t1 = clock::now();
    sink += f.vec[0][0];
    tc.push_back(std::chrono::duration<double>(t1 - t0).count());

    t0 = clock::now();
    const DenseGrid3D dense = reconstruct_dense(t);
    const DenseGrid3D conv = brute_force_conv3d(dense, k3);
    t1 = clock::now();
    sink += conv.data[0];
    tb.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  [[maybe_unused]] volatile double keep = sink;

  BenchReport rep;
  rep.dims = dims;
  rep.rank = rank;
  rep.kernel_length = kernel_length;
  rep.repetitions = repetitions;
  rep.componentwise_seconds = median(tc);
  rep.bruteforce_seconds = median(tb);
  rep.ops_componentwise = componentwise_op_count(dims, rank, kernel_length);
  rep.ops_bruteforce = bruteforce_op_count(dims, kernel_length);
  return rep;
}

}  // namespace tensorpose
