// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tensorpose/image.hpp"
#include "tensorpose/random.hpp"

// Instrumented builds count component reads per query so tests can assert
// that sampling touches O(R) entries.
#ifdef TENSORPOSE_INSTRUMENT
#define TENSORPOSE_COUNT_READS(n) (::tensorpose::detail::component_reads() += (n))
#else
#define TENSORPOSE_COUNT_READS(n) ((void)0)
#endif

namespace tensorpose {

namespace detail {
inline std::uint64_t& component_reads() {
  thread_local std::uint64_t count = 0;
  return count;
}
}  // namespace detail

/// Largest dense array reconstruct_dense / brute-force oracles will allocate.
inline constexpr std::size_t kDenseElementCap = std::size_t{1} << 26;

using Dims3 = std::array<std::size_t, 3>;

/// The two axes spanning the matrix component paired with vector axis a.
constexpr std::array<std::size_t, 2> plane_axes(std::size_t a) {
  return a == 0 ? std::array<std::size_t, 2>{1, 2}
                : a == 1 ? std::array<std::size_t, 2>{0, 2} : std::array<std::size_t, 2>{0, 1};
}

// ---------------------------------------------------------------------------

/// Rank-R vector-matrix decomposition of an I x J x K grid:
///   T(i,j,k) = sum_r vx_r[i] Myz_r[j,k] + vy_r[j] Mxz_r[i,k] + vz_r[k] Mxy_r[i,j]
///
/// Storage keeps the rank index innermost so a point query reads R
/// contiguous values per stencil corner: vec[a] is dims[a] x R and mat[a]
/// is dims[p] x dims[q] x R for (p, q) = plane_axes(a).
struct VMTensor3D {
  Dims3 dims{1, 1, 1};
  std::size_t rank = 1;
  std::array<std::vector<double>, 3> vec;
  std::array<std::vector<double>, 3> mat;

  VMTensor3D() = default;
  VMTensor3D(const Dims3& d, std::size_t r) : dims(d), rank(r) {
    if (r == 0 || d[0] == 0 || d[1] == 0 || d[2] == 0)
      throw std::invalid_argument("VMTensor3D: dims and rank must be positive");
    for (std::size_t a = 0; a < 3; ++a) {
      const auto [p, q] = plane_axes(a);
      vec[a].assign(d[a] * r, 0.0);
      mat[a].assign(d[p] * d[q] * r, 0.0);
    }
  }

  double& v(std::size_t a, std::size_t i, std::size_t r) { return vec[a][i * rank + r]; }
  double v(std::size_t a, std::size_t i, std::size_t r) const { return vec[a][i * rank + r]; }
  double& m(std::size_t a, std::size_t i, std::size_t j, std::size_t r) {
    return mat[a][(i * dims[plane_axes(a)[1]] + j) * rank + r];
  }
  double m(std::size_t a, std::size_t i, std::size_t j, std::size_t r) const {
    return mat[a][(i * dims[plane_axes(a)[1]] + j) * rank + r];
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t a = 0; a < 3; ++a) n += vec[a].size() + mat[a].size();
    return n;
  }
  void set_zero() {
    for (std::size_t a = 0; a < 3; ++a) {
      std::fill(vec[a].begin(), vec[a].end(), 0.0);
      std::fill(mat[a].begin(), mat[a].end(), 0.0);
    }
  }
  bool same_shape(const VMTensor3D& o) const { return dims == o.dims && rank == o.rank; }
};

/// Appearance tensor: VM components whose per-axis coefficients are
/// expanded onto feature bases b_a[r] in R^G.
struct FeatureTensor3D {
  VMTensor3D comps;
  std::size_t features = 1;
  std::array<std::vector<double>, 3> basis;  // basis[a] is R x G

  FeatureTensor3D() = default;
  FeatureTensor3D(const Dims3& d, std::size_t r, std::size_t g) : comps(d, r), features(g) {
    if (g == 0) throw std::invalid_argument("FeatureTensor3D: feature dim must be positive");
    for (auto& b : basis) b.assign(r * g, 0.0);
  }

  const Dims3& dims() const { return comps.dims; }
  std::size_t rank() const { return comps.rank; }
  double& b(std::size_t a, std::size_t r, std::size_t g) { return basis[a][r * features + g]; }
  double b(std::size_t a, std::size_t r, std::size_t g) const { return basis[a][r * features + g]; }
  std::size_t parameter_count() const {
    return comps.parameter_count() + 3 * comps.rank * features;
  }
  void set_zero() {
    comps.set_zero();
    for (auto& b : basis) std::fill(b.begin(), b.end(), 0.0);
  }
};

/// Per-channel rank-R image factorization:
///   I(x, y, c) = sum_r vx[c][x, r] * vy[c][y, r]
struct Tensor2DFactorized {
  std::size_t width = 1;
  std::size_t height = 1;
  std::size_t rank = 1;
  std::size_t channels = 3;
  std::vector<double> vx;  // channels x width x rank
  std::vector<double> vy;  // channels x height x rank

  Tensor2DFactorized() = default;
  Tensor2DFactorized(std::size_t w, std::size_t h, std::size_t r, std::size_t c = 3)
      : width(w), height(h), rank(r), channels(c) {
    if (w == 0 || h == 0 || r == 0 || c == 0)
      throw std::invalid_argument("Tensor2DFactorized: sizes must be positive");
    vx.assign(c * w * r, 0.0);
    vy.assign(c * h * r, 0.0);
  }

  double& x(std::size_t c, std::size_t i, std::size_t r) { return vx[(c * width + i) * rank + r]; }
  double x(std::size_t c, std::size_t i, std::size_t r) const { return vx[(c * width + i) * rank + r]; }
  double& y(std::size_t c, std::size_t j, std::size_t r) { return vy[(c * height + j) * rank + r]; }
  double y(std::size_t c, std::size_t j, std::size_t r) const { return vy[(c * height + j) * rank + r]; }
  std::size_t parameter_count() const { return vx.size() + vy.size(); }
};

// ---------------------------------------------------------------------------
// Dense oracles.

struct DenseGrid3D {
  Dims3 dims{0, 0, 0};
  std::vector<double> data;

  DenseGrid3D() = default;
  explicit DenseGrid3D(const Dims3& d) : dims(d) {
    const std::size_t n = d[0] * d[1] * d[2];
    if (n > kDenseElementCap) throw std::length_error("dense grid exceeds memory cap");
    data.assign(n, 0.0);
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * dims[1] + j) * dims[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * dims[1] + j) * dims[2] + k];
  }
};

/// Dense I x J x K x G feature volume.
struct DenseFeatureGrid {
  Dims3 dims{0, 0, 0};
  std::size_t features = 0;
  std::vector<double> data;

  DenseFeatureGrid(const Dims3& d, std::size_t g) : dims(d), features(g) {
    const std::size_t n = d[0] * d[1] * d[2] * g;
    if (n > kDenseElementCap) throw std::length_error("dense grid exceeds memory cap");
    data.assign(n, 0.0);
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t g) {
    return data[((i * dims[1] + j) * dims[2] + k) * features + g];
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t g) const {
    return data[((i * dims[1] + j) * dims[2] + k) * features + g];
  }
};

inline DenseGrid3D reconstruct_dense(const VMTensor3D& t) {
  DenseGrid3D out(t.dims);
  for (std::size_t i = 0; i < t.dims[0]; ++i)
    for (std::size_t j = 0; j < t.dims[1]; ++j)
      for (std::size_t k = 0; k < t.dims[2]; ++k) {
        double s = 0.0;
        for (std::size_t r = 0; r < t.rank; ++r)
          s += t.v(0, i, r) * t.m(0, j, k, r) + t.v(1, j, r) * t.m(1, i, k, r) +
               t.v(2, k, r) * t.m(2, i, j, r);
        out.at(i, j, k) = s;
      }
  return out;
}

inline DenseFeatureGrid reconstruct_dense(const FeatureTensor3D& t) {
  const VMTensor3D& c = t.comps;
  DenseFeatureGrid out(c.dims, t.features);
  for (std::size_t i = 0; i < c.dims[0]; ++i)
    for (std::size_t j = 0; j < c.dims[1]; ++j)
      for (std::size_t k = 0; k < c.dims[2]; ++k)
        for (std::size_t r = 0; r < c.rank; ++r) {
          const double px = c.v(0, i, r) * c.m(0, j, k, r);
          const double py = c.v(1, j, r) * c.m(1, i, k, r);
          const double pz = c.v(2, k, r) * c.m(2, i, j, r);
          for (std::size_t g = 0; g < t.features; ++g)
            out.at(i, j, k, g) += px * t.b(0, r, g) + py * t.b(1, r, g) + pz * t.b(2, r, g);
        }
  return out;
}

inline Image reconstruct_dense(const Tensor2DFactorized& t) {
  if (t.width * t.height * t.channels > kDenseElementCap)
    throw std::length_error("dense image exceeds memory cap");
  Image out(t.width, t.height, t.channels);
  for (std::size_t c = 0; c < t.channels; ++c)
    for (std::size_t yy = 0; yy < t.height; ++yy)
      for (std::size_t xx = 0; xx < t.width; ++xx) {
        double s = 0.0;
        for (std::size_t r = 0; r < t.rank; ++r) s += t.x(c, xx, r) * t.y(c, yy, r);
        out.at(xx, yy, c) = s;
      }
  return out;
}

/// Trilinear interpolation of a dense grid (clamp-to-border); test oracle.
inline double trilinear(const DenseGrid3D& g, const std::array<double, 3>& p) {
  const AxisLerp a = axis_lerp(p[0], g.dims[0]);
  const AxisLerp b = axis_lerp(p[1], g.dims[1]);
  const AxisLerp c = axis_lerp(p[2], g.dims[2]);
  double s = 0.0;
  for (int di = 0; di < 2; ++di)
    for (int dj = 0; dj < 2; ++dj)
      for (int dk = 0; dk < 2; ++dk) {
        const double w = (di ? a.f : 1 - a.f) * (dj ? b.f : 1 - b.f) * (dk ? c.f : 1 - c.f);
        s += w * g.at(di ? a.i1 : a.i0, dj ? b.i1 : b.i0, dk ? c.i1 : c.i0);
      }
  return s;
}

// ---------------------------------------------------------------------------
// Component-wise sampling.

/// Interpolation stencil of one continuous grid coordinate, shared by every
/// VM tensor with the same dims.
struct PointStencil {
  std::array<AxisLerp, 3> axis;
};

inline PointStencil make_stencil(const Dims3& dims, const std::array<double, 3>& p) {
  return PointStencil{{axis_lerp(p[0], dims[0]), axis_lerp(p[1], dims[1]),
                       axis_lerp(p[2], dims[2])}};
}

/// Per-axis, per-rank products coef[a*R + r] = lerp(v_a,r) * bilerp(M_a,r).
/// Reads 2 vector and 4 matrix entries per (axis, rank): 18 R in total.
inline void vm_coefficients(const VMTensor3D& t, const PointStencil& s, double* coef) {
  const std::size_t R = t.rank;
  TENSORPOSE_COUNT_READS(18 * R);
  for (std::size_t a = 0; a < 3; ++a) {
    const auto [p, q] = plane_axes(a);
    const AxisLerp& la = s.axis[a];
    const AxisLerp& lp = s.axis[p];
    const AxisLerp& lq = s.axis[q];
    const double* v0 = &t.vec[a][la.i0 * R];
    const double* v1 = &t.vec[a][la.i1 * R];
    const std::size_t nq = t.dims[q];
    const double* m00 = &t.mat[a][(lp.i0 * nq + lq.i0) * R];
    const double* m01 = &t.mat[a][(lp.i0 * nq + lq.i1) * R];
    const double* m10 = &t.mat[a][(lp.i1 * nq + lq.i0) * R];
    const double* m11 = &t.mat[a][(lp.i1 * nq + lq.i1) * R];
    double* out = coef + a * R;
    for (std::size_t r = 0; r < R; ++r) {
      const double vv = v0[r] + la.f * (v1[r] - v0[r]);
      const double lo = m00[r] + lq.f * (m01[r] - m00[r]);
      const double hi = m10[r] + lq.f * (m11[r] - m10[r]);
      out[r] = vv * (lo + lp.f * (hi - lo));
    }
  }
}

/// Adjoint of vm_coefficients. Accumulates component gradients into grad
/// (if non-null) and the gradient w.r.t. the grid coordinate into gpos.
inline void vm_backward(const VMTensor3D& t, const PointStencil& s, const double* gcoef,
                        VMTensor3D* grad, double* gpos) {
  const std::size_t R = t.rank;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto [p, q] = plane_axes(a);
    const AxisLerp& la = s.axis[a];
    const AxisLerp& lp = s.axis[p];
    const AxisLerp& lq = s.axis[q];
    const std::size_t nq = t.dims[q];
    const std::size_t iv0 = la.i0 * R, iv1 = la.i1 * R;
    const std::size_t i00 = (lp.i0 * nq + lq.i0) * R, i01 = (lp.i0 * nq + lq.i1) * R;
    const std::size_t i10 = (lp.i1 * nq + lq.i0) * R, i11 = (lp.i1 * nq + lq.i1) * R;
    const double* vec = t.vec[a].data();
    const double* mat = t.mat[a].data();
    const double* g = gcoef + a * R;
    double ga = 0.0, gp = 0.0, gq = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      if (g[r] == 0.0) continue;
      const double v0 = vec[iv0 + r], v1 = vec[iv1 + r];
      const double m00 = mat[i00 + r], m01 = mat[i01 + r];
      const double m10 = mat[i10 + r], m11 = mat[i11 + r];
      const double vv = v0 + la.f * (v1 - v0);
      const double lo = m00 + lq.f * (m01 - m00);
      const double hi = m10 + lq.f * (m11 - m10);
      const double mm = lo + lp.f * (hi - lo);
      if (grad) {
        double* gv = grad->vec[a].data();
        double* gm = grad->mat[a].data();
        gv[iv0 + r] += g[r] * (1.0 - la.f) * mm;
        gv[iv1 + r] += g[r] * la.f * mm;
        const double gvm = g[r] * vv;
        gm[i00 + r] += gvm * (1.0 - lp.f) * (1.0 - lq.f);
        gm[i01 + r] += gvm * (1.0 - lp.f) * lq.f;
        gm[i10 + r] += gvm * lp.f * (1.0 - lq.f);
        gm[i11 + r] += gvm * lp.f * lq.f;
      }
      if (gpos) {
        ga += g[r] * (v1 - v0) * mm;
        gp += g[r] * vv * (hi - lo);
        gq += g[r] * vv * ((1.0 - lp.f) * (m01 - m00) + lp.f * (m11 - m10));
      }
    }
    if (gpos) {
      gpos[a] += ga * la.dslope;
      gpos[p] += gp * lp.dslope;
      gpos[q] += gq * lq.dslope;
    }
  }
}

inline double sample_density(const VMTensor3D& t, const std::array<double, 3>& p) {
  const PointStencil s = make_stencil(t.dims, p);
  std::vector<double> coef(3 * t.rank);
  vm_coefficients(t, s, coef.data());
  double sum = 0.0;
  for (double c : coef) sum += c;
  return sum;
}

/// Feature composition from precomputed coefficients.
inline void compose_features(const FeatureTensor3D& t, const double* coef, double* feat) {
  const std::size_t R = t.rank(), G = t.features;
  TENSORPOSE_COUNT_READS(3 * R * G);
  for (std::size_t g = 0; g < G; ++g) feat[g] = 0.0;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t r = 0; r < R; ++r) {
      const double c = coef[a * R + r];
      const double* b = &t.basis[a][r * G];
      for (std::size_t g = 0; g < G; ++g) feat[g] += c * b[g];
    }
}

inline std::vector<double> sample_feature(const FeatureTensor3D& t, const std::array<double, 3>& p) {
  const PointStencil s = make_stencil(t.dims(), p);
  std::vector<double> coef(3 * t.rank());
  vm_coefficients(t.comps, s, coef.data());
  std::vector<double> feat(t.features);
  compose_features(t, coef.data(), feat.data());
  return feat;
}

/// Component-wise bilinear sample of every channel at (x, y).
inline std::vector<double> sample2d(const Tensor2DFactorized& t, double x, double y) {
  const AxisLerp ax = axis_lerp(x, t.width);
  const AxisLerp ay = axis_lerp(y, t.height);
  TENSORPOSE_COUNT_READS(4 * t.rank * t.channels);
  std::vector<double> out(t.channels, 0.0);
  for (std::size_t c = 0; c < t.channels; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < t.rank; ++r) {
      const double vx0 = t.x(c, ax.i0, r), vx1 = t.x(c, ax.i1, r);
      const double vy0 = t.y(c, ay.i0, r), vy1 = t.y(c, ay.i1, r);
      s += (vx0 + ax.f * (vx1 - vx0)) * (vy0 + ay.f * (vy1 - vy0));
    }
    out[c] = s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Construction and resampling.

inline void fill_normal(std::vector<double>& v, double scale, Rng& rng) {
  for (double& x : v) x = scale == 0.0 ? 0.0 : scale * normal01(rng);
}

inline VMTensor3D init_random(const Dims3& dims, std::size_t rank, double scale, Rng& rng) {
  VMTensor3D t(dims, rank);
  for (std::size_t a = 0; a < 3; ++a) {
    fill_normal(t.vec[a], scale, rng);
    fill_normal(t.mat[a], scale, rng);
  }
  return t;
}

inline FeatureTensor3D init_random_feature(const Dims3& dims, std::size_t rank,
                                           std::size_t features, double scale,
                                           double basis_scale, Rng& rng) {
  FeatureTensor3D t(dims, rank, features);
  t.comps = init_random(dims, rank, scale, rng);
  for (auto& b : t.basis) fill_normal(b, basis_scale, rng);
  return t;
}

inline Tensor2DFactorized init_random_2d(std::size_t width, std::size_t height,
                                         std::size_t rank, std::size_t channels,
                                         double scale, Rng& rng) {
  Tensor2DFactorized t(width, height, rank, channels);
  fill_normal(t.vx, scale, rng);
  fill_normal(t.vy, scale, rng);
  return t;
}

/// alpha*a + beta*b as one tensor of rank Ra + Rb (scales land on the
/// vector factors).
inline VMTensor3D concat(const VMTensor3D& a, double alpha, const VMTensor3D& b, double beta) {
  if (a.dims != b.dims) throw std::invalid_argument("concat: dims mismatch");
  VMTensor3D out(a.dims, a.rank + b.rank);
  for (std::size_t ax = 0; ax < 3; ++ax) {
    const auto [p, q] = plane_axes(ax);
    for (std::size_t i = 0; i < a.dims[ax]; ++i) {
      for (std::size_t r = 0; r < a.rank; ++r) out.v(ax, i, r) = alpha * a.v(ax, i, r);
      for (std::size_t r = 0; r < b.rank; ++r) out.v(ax, i, a.rank + r) = beta * b.v(ax, i, r);
    }
    for (std::size_t i = 0; i < a.dims[p]; ++i)
      for (std::size_t j = 0; j < a.dims[q]; ++j) {
        for (std::size_t r = 0; r < a.rank; ++r) out.m(ax, i, j, r) = a.m(ax, i, j, r);
        for (std::size_t r = 0; r < b.rank; ++r) out.m(ax, i, j, a.rank + r) = b.m(ax, i, j, r);
      }
  }
  return out;
}

namespace detail {
/// Align-corners source coordinate of index j when resampling n_old -> n_new.
inline double resample_coord(std::size_t j, std::size_t n_old, std::size_t n_new) {
  if (n_new <= 1 || n_old <= 1) return 0.0;
  return static_cast<double>(j) * static_cast<double>(n_old - 1) / static_cast<double>(n_new - 1);
}
}  // namespace detail

/// Linearly resamples vectors and bilinearly resamples matrices to new_dims.
inline VMTensor3D upsample(const VMTensor3D& t, const Dims3& new_dims) {
  for (std::size_t a = 0; a < 3; ++a)
    if (new_dims[a] < t.dims[a]) throw std::invalid_argument("upsample: cannot shrink");
  if (new_dims == t.dims) return t;
  const std::size_t R = t.rank;
  VMTensor3D out(new_dims, R);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < new_dims[a]; ++i) {
      const AxisLerp l = axis_lerp(detail::resample_coord(i, t.dims[a], new_dims[a]), t.dims[a]);
      for (std::size_t r = 0; r < R; ++r) {
        const double v0 = t.v(a, l.i0, r), v1 = t.v(a, l.i1, r);
        out.v(a, i, r) = v0 + l.f * (v1 - v0);
      }
    }
    const auto [p, q] = plane_axes(a);
    for (std::size_t i = 0; i < new_dims[p]; ++i) {
      const AxisLerp lp = axis_lerp(detail::resample_coord(i, t.dims[p], new_dims[p]), t.dims[p]);
      for (std::size_t j = 0; j < new_dims[q]; ++j) {
        const AxisLerp lq = axis_lerp(detail::resample_coord(j, t.dims[q], new_dims[q]), t.dims[q]);
        for (std::size_t r = 0; r < R; ++r) {
          const double m00 = t.m(a, lp.i0, lq.i0, r), m01 = t.m(a, lp.i0, lq.i1, r);
          const double m10 = t.m(a, lp.i1, lq.i0, r), m11 = t.m(a, lp.i1, lq.i1, r);
          const double lo = m00 + lq.f * (m01 - m00);
          const double hi = m10 + lq.f * (m11 - m10);
          out.m(a, i, j, r) = lo + lp.f * (hi - lo);
        }
      }
    }
  }
  return out;
}

inline FeatureTensor3D upsample(const FeatureTensor3D& t, const Dims3& new_dims) {
  FeatureTensor3D out = t;
  out.comps = upsample(t.comps, new_dims);
  return out;
}

}  // namespace tensorpose
