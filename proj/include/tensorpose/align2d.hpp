// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

// Planar alignment: a rank-R image field and per-patch homographies fitted
// jointly under a coarse-to-fine Gaussian schedule.
//
// Coordinates. Image pixel (x, y) has index coordinates (x, y). Normalized
// coordinates are centred on the image and scaled by s = min(W, H) / 2:
//   x = q.x * s + W / 2 - 0.5
// Patch pixel (i, j) sits at u = ((i + 0.5 - P / 2) / s, (j + 0.5 - P / 2) / s)
// and is warped to q = H u with H = exp_sl3(warp).

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorpose/csv.hpp"
#include "tensorpose/dual.hpp"
#include "tensorpose/geometry.hpp"
#include "tensorpose/image.hpp"
#include "tensorpose/kernels.hpp"
#include "tensorpose/log.hpp"
#include "tensorpose/optim.hpp"
#include "tensorpose/random.hpp"
#include "tensorpose/sepconv.hpp"
#include "tensorpose/tensorfield.hpp"

namespace tensorpose {

// ---------------------------------------------------------------------------
// Test texture.

/// Axis-separable procedural texture: checkers, blobs and bar strokes, each a
/// rank-one product, affinely mapped to [0.05, 0.95]. Per-channel rank stays
/// below 32 so a rank-32 field can represent it.
inline Image procedural_texture(std::size_t width, std::size_t height, std::uint64_t seed = 0) {
  if (width < 8 || height < 8) throw std::invalid_argument("procedural_texture: image too small");
  Rng rng = make_substream(seed, "texture");
  const double W = static_cast<double>(width), H = static_cast<double>(height);
  const double unit = std::min(W, H) / 256.0;
  std::vector<double> plane(width * height * 3, 0.0);
  auto add_rank1 = [&](const std::vector<double>& fx, const std::vector<double>& fy,
                       const std::array<double, 3>& col) {
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        for (int c = 0; c < 3; ++c) plane[(y * width + x) * 3 + c] += col[c] * fx[x] * fy[y];
  };
  auto square_wave = [](std::size_t n, double period, double phase) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::tanh(3.0 * std::sin(2.0 * M_PI * (i + phase) / period));
    return v;
  };
  auto bump = [](std::size_t n, double centre, double radius) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (static_cast<double>(i) - centre) / radius;
      v[i] = std::exp(-0.5 * d * d);
    }
    return v;
  };
  auto bar = [](std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i);
      v[i] = 0.5 * (std::tanh(1.5 * (t - lo)) - std::tanh(1.5 * (t - hi)));
    }
    return v;
  };
  auto colour = [&](double amp) {
    return std::array<double, 3>{amp * (2 * uniform01(rng) - 1), amp * (2 * uniform01(rng) - 1),
                                 amp * (2 * uniform01(rng) - 1)};
  };

  add_rank1(square_wave(width, 22 * unit, 0), square_wave(height, 22 * unit, 0), colour(0.5));
  add_rank1(square_wave(width, 7 * unit, 1), square_wave(height, 9 * unit, 2), colour(0.35));
  for (int b = 0; b < 9; ++b)
    add_rank1(bump(width, W * uniform01(rng), (6 + 24 * uniform01(rng)) * unit),
              bump(height, H * uniform01(rng), (6 + 24 * uniform01(rng)) * unit), colour(1.0));
  for (int s = 0; s < 12; ++s) {
    const bool horizontal = s % 2 == 0;
    const double a = (horizontal ? W : H) * uniform01(rng), len = (20 + 60 * uniform01(rng)) * unit;
    const double b = (horizontal ? H : W) * uniform01(rng), thick = (2 + 3 * uniform01(rng)) * unit;
    const auto along = bar(horizontal ? width : height, a, a + len);
    const auto across = bar(horizontal ? height : width, b, b + thick);
    add_rank1(horizontal ? along : across, horizontal ? across : along, colour(0.8));
  }
  const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
  const double a = *lo, span = std::max(1e-12, *hi - *lo);
  Image img(width, height, 3);
  for (std::size_t i = 0; i < plane.size(); ++i) img.data[i] = 0.05 + 0.9 * (plane[i] - a) / span;
  return img;
}

// ---------------------------------------------------------------------------
// Problem and state.

struct PlanarFrame {
  std::size_t width = 0, height = 0;
  double scale = 1.0;

  Eigen::Vector2d to_pixel(const Eigen::Vector2d& q) const {
    return {q.x() * scale + 0.5 * static_cast<double>(width) - 0.5,
            q.y() * scale + 0.5 * static_cast<double>(height) - 0.5};
  }
};

struct PlanarProblem {
  Image image;
  PlanarFrame frame;
  std::size_t patch_size = 0;
  std::vector<SL3Tangent> gt_warps;
  std::vector<SL3Tangent> init_warps;  // nominal crop placements
  std::vector<Image> patches;

  std::size_t count() const { return patches.size(); }
  Eigen::Vector2d patch_point(std::size_t i, std::size_t j) const {
    const double h = 0.5 * static_cast<double>(patch_size);
    return {(static_cast<double>(i) + 0.5 - h) / frame.scale, (static_cast<double>(j) + 0.5 - h) / frame.scale};
  }
};

struct PlanarState {
  Tensor2DFactorized field;
  std::vector<SL3Tangent> warps;  // warps[0] is the frozen anchor
  long step = 0;
};

/// Relative size of each sl(3) coordinate in random perturbations.
inline constexpr std::array<double, 8> kPerturbWeights{1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.25, 0.25};

namespace detail {
inline bool warp_in_bounds(const PlanarProblem& p, const SL3Tangent& w) {
  const Eigen::Matrix3d H = exp_sl3(w);
  const double e = 0.5 * static_cast<double>(p.patch_size) / p.frame.scale;
  for (double sx : {-e, e})
    for (double sy : {-e, e}) {
      const auto q = apply_homography(H, {sx, sy});
      if (!q) return false;
      const Eigen::Vector2d x = p.frame.to_pixel(*q);
      if (x.x() < 0 || x.y() < 0 || x.x() > static_cast<double>(p.frame.width) - 1 ||
          x.y() > static_cast<double>(p.frame.height) - 1)
        return false;
    }
  return true;
}

inline Image render_patch(const PlanarProblem& p, const SL3Tangent& w) {
  const Eigen::Matrix3d H = exp_sl3(w);
  Image out(p.patch_size, p.patch_size, p.image.channels);
  for (std::size_t j = 0; j < p.patch_size; ++j)
    for (std::size_t i = 0; i < p.patch_size; ++i) {
      const auto q = apply_homography(H, p.patch_point(i, j));
      if (!q) throw std::runtime_error("patch warp hits infinity");
      const Eigen::Vector2d x = p.frame.to_pixel(*q);
      sample_bilinear(p.image, x.x(), x.y(), &out.at(i, j, 0));
    }
  return out;
}
}  // namespace detail

/// Patch 0 at the centre, the rest on a ring of radius offset_radius
/// (normalized units, snapped to whole pixels). Ground-truth warps add a
/// random sl(3) perturbation to each placement; out-of-bounds draws are
/// redrawn.
inline PlanarProblem make_patches(const Image& image, std::size_t count, std::size_t patch_size,
                                  double perturb_scale, double offset_radius, Rng& rng) {
  if (count == 0) throw std::invalid_argument("make_patches: need at least one patch");
  if (image.channels != 3) throw std::invalid_argument("make_patches: expected an RGB image");
  if (patch_size < 2 || patch_size > std::min(image.width, image.height))
    throw std::invalid_argument("make_patches: patch larger than image");
  PlanarProblem p;
  p.image = image;
  p.frame = {image.width, image.height, 0.5 * static_cast<double>(std::min(image.width, image.height))};
  p.patch_size = patch_size;
  for (std::size_t k = 0; k < count; ++k) {
    SL3Tangent base{};
    if (k > 0) {
      const double a = M_PI / 4 + 2 * M_PI * static_cast<double>(k - 1) / static_cast<double>(count - 1);
      base[0] = std::round(offset_radius * std::cos(a) * p.frame.scale) / p.frame.scale;
      base[1] = std::round(offset_radius * std::sin(a) * p.frame.scale) / p.frame.scale;
    }
    if (!detail::warp_in_bounds(p, base)) throw std::invalid_argument("make_patches: placement leaves the image");
    SL3Tangent gt = base;
    bool ok = perturb_scale == 0.0;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      for (int c = 0; c < 8; ++c) gt[c] = base[c] + perturb_scale * kPerturbWeights[c] * normal01(rng);
      ok = detail::warp_in_bounds(p, gt);
    }
    if (!ok) throw std::runtime_error("make_patches: no in-bounds perturbation after 100 draws");
    p.init_warps.push_back(base);
    p.gt_warps.push_back(gt);
    p.patches.push_back(detail::render_patch(p, gt));
  }
  return p;
}

/// Field at its initial random draw; free warps at the nominal placements,
/// the anchor at its ground truth.
inline PlanarState initial_state(const PlanarProblem& p, std::size_t rank, double init_scale, Rng& rng) {
  PlanarState s;
  s.field = init_random_2d(p.image.width, p.image.height, rank, p.image.channels, init_scale, rng);
  s.warps = p.init_warps;
  s.warps[0] = p.gt_warps[0];
  return s;
}

// ---------------------------------------------------------------------------
// Loss.

struct KernelOptions {
  std::size_t max_length = 129;
  bool normalize = false;
};

struct PlanarLoss {
  double loss = 0.0;
  std::size_t counted = 0;  // pixels in the sum
  std::size_t dropped = 0;  // pixels warped to infinity
  Tensor2DFactorized grad_field;
  std::vector<SL3Tangent> grad_warps;
};

namespace detail {

/// Dense field, pixels interleaved like Image (channels innermost).
struct DenseField {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<double> data;

  struct Corners {
    std::size_t o00, o10, o01, o11;
    double fx, fy;
  };
  Corners corners(const AxisLerp& ax, const AxisLerp& ay) const {
    const std::size_t r0 = ay.i0 * width, r1 = ay.i1 * width;
    return {(r0 + ax.i0) * channels, (r0 + ax.i1) * channels, (r1 + ax.i0) * channels,
            (r1 + ax.i1) * channels, ax.f, ay.f};
  }
  double sample(const Corners& k, std::size_t c) const {
    const double v00 = data[k.o00 + c], v10 = data[k.o10 + c], v01 = data[k.o01 + c], v11 = data[k.o11 + c];
    return (1 - k.fy) * (v00 + k.fx * (v10 - v00)) + k.fy * (v01 + k.fx * (v11 - v01));
  }
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMat> factor(const std::vector<double>& v, std::size_t c, std::size_t n, std::size_t r) {
  return Eigen::Map<const RowMat>(v.data() + c * n * r, static_cast<long>(n), static_cast<long>(r));
}
inline Eigen::Map<RowMat> factor(std::vector<double>& v, std::size_t c, std::size_t n, std::size_t r) {
  return Eigen::Map<RowMat>(v.data() + c * n * r, static_cast<long>(n), static_cast<long>(r));
}

inline DenseField densify(const Tensor2DFactorized& t) {
  DenseField d{t.width, t.height, t.channels, std::vector<double>(t.width * t.height * t.channels)};
  for (std::size_t c = 0; c < t.channels; ++c) {
    const Eigen::MatrixXd m = factor(t.vx, c, t.width, t.rank) * factor(t.vy, c, t.height, t.rank).transpose();
    for (std::size_t y = 0; y < t.height; ++y)
      for (std::size_t x = 0; x < t.width; ++x) d.data[(y * t.width + x) * t.channels + c] = m(x, y);
  }
  return d;
}

/// Homography entries and their derivatives w.r.t. the 8 tangent coordinates.
inline std::pair<Eigen::Matrix3d, Eigen::Matrix<double, 9, 8>> homography_jacobian(const SL3Tangent& w) {
  std::array<Dual<8>, 8> xi;
  for (int k = 0; k < 8; ++k) xi[k] = Dual<8>::variable(w[k], k);
  const auto e = exp_sl3_t(xi);
  Eigen::Matrix3d H;
  Eigen::Matrix<double, 9, 8> J;
  for (int i = 0; i < 9; ++i) {
    H(i / 3, i % 3) = e[i].v;
    for (int k = 0; k < 8; ++k) J(i, k) = e[i].d[k];
  }
  return {H, J};
}

}  // namespace detail

/// Mean squared error between the filtered field sampled at warped patch
/// coordinates and the (optionally blurred) patch pixels, with gradients for
/// the field factors and every warp (the caller decides which warps move).
inline PlanarLoss loss_2d(const PlanarState& s, const PlanarProblem& p, double sigma_field,
                          double sigma_image, const KernelOptions& ko = {}, bool with_grad = true) {
  if (s.warps.size() != p.count()) throw std::invalid_argument("loss_2d: warp count mismatch");
  const Tensor2DFactorized& T = s.field;
  if (T.width != p.image.width || T.height != p.image.height || T.channels != p.image.channels)
    throw std::invalid_argument("loss_2d: field shape does not match the image");
  const std::size_t C = T.channels;
  const GaussianKernel1D kf = make_scheduled_kernel(sigma_field, ko.max_length, ko.normalize);
  const auto view = filter_components_2d(T, kf);
  const detail::DenseField D = detail::densify(view.filtered);

  std::optional<GaussianKernel1D> ki;
  if (sigma_image >= kImpulseSigma) ki = make_scheduled_kernel(sigma_image, ko.max_length, ko.normalize);

  PlanarLoss out;
  std::vector<double> G;
  if (with_grad) {
    G.assign(D.data.size(), 0.0);
    out.grad_warps.assign(p.count(), SL3Tangent{});
  }
  double sum = 0.0;
  const double sc = p.frame.scale;
  std::vector<double> res(C);
  for (std::size_t k = 0; k < p.count(); ++k) {
    const Image blurred = ki ? convolve_image(p.patches[k], *ki) : Image{};
    const Image& target = ki ? blurred : p.patches[k];
    const auto [H, J] = detail::homography_jacobian(s.warps[k]);
    Eigen::Matrix3d gH = Eigen::Matrix3d::Zero();
    for (std::size_t j = 0; j < p.patch_size; ++j)
      for (std::size_t i = 0; i < p.patch_size; ++i) {
        const Eigen::Vector2d u = p.patch_point(i, j);
        const Eigen::Vector3d h = H * Eigen::Vector3d(u.x(), u.y(), 1.0);
        if (!(std::abs(h.z()) > 1e-12) || !h.allFinite()) {
          ++out.dropped;
          continue;
        }
        ++out.counted;
        const Eigen::Vector2d q(h.x() / h.z(), h.y() / h.z());
        const Eigen::Vector2d x = p.frame.to_pixel(q);
        const AxisLerp ax = axis_lerp(x.x(), T.width), ay = axis_lerp(x.y(), T.height);
        const auto cr = D.corners(ax, ay);
        const double* tp = target.data.data() + (j * target.width + i) * C;
        for (std::size_t c = 0; c < C; ++c) {
          res[c] = D.sample(cr, c) - tp[c];
          sum += res[c] * res[c];
        }
        if (!with_grad) continue;
        const double w00 = (1 - ax.f) * (1 - ay.f), w10 = ax.f * (1 - ay.f), w01 = (1 - ax.f) * ay.f,
                     w11 = ax.f * ay.f;
        double gx = 0.0, gy = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          const double g = res[c];
          G[cr.o00 + c] += g * w00;
          G[cr.o10 + c] += g * w10;
          G[cr.o01 + c] += g * w01;
          G[cr.o11 + c] += g * w11;
          const double v00 = D.data[cr.o00 + c], v10 = D.data[cr.o10 + c], v01 = D.data[cr.o01 + c],
                       v11 = D.data[cr.o11 + c];
          gx += g * ((1 - ay.f) * (v10 - v00) + ay.f * (v11 - v01));
          gy += g * ((1 - ax.f) * (v01 - v00) + ax.f * (v11 - v10));
        }
        // pixel -> normalized -> homogeneous
        const double qx = gx * ax.dslope * sc, qy = gy * ay.dslope * sc, iz = 1.0 / h.z();
        const Eigen::RowVector3d uh(u.x() * iz, u.y() * iz, iz);
        gH.row(0) += qx * uh;
        gH.row(1) += qy * uh;
        gH.row(2) -= (qx * q.x() + qy * q.y()) * uh;
      }
    if (with_grad)
      for (int c = 0; c < 8; ++c) {
        double v = 0.0;
        for (int e = 0; e < 9; ++e) v += gH(e / 3, e % 3) * J(e, c);
        out.grad_warps[k][c] = v;
      }
  }
  const double n = static_cast<double>(out.counted * C);
  out.loss = n > 0 ? sum / n : 0.0;
  if (!with_grad) return out;
  // d(mean r^2) = 2 r / n
  const double f = n > 0 ? 2.0 / n : 0.0;
  for (auto& w : out.grad_warps)
    for (double& v : w) v *= f;
  Tensor2DFactorized gF(T.width, T.height, T.rank, C);
  Eigen::MatrixXd Gc(static_cast<long>(T.width), static_cast<long>(T.height));
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < T.height; ++y)
      for (std::size_t x = 0; x < T.width; ++x) Gc(x, y) = f * G[(y * T.width + x) * C + c];
    detail::factor(gF.vx, c, T.width, T.rank) = Gc * detail::factor(view.filtered.vy, c, T.height, T.rank);
    detail::factor(gF.vy, c, T.height, T.rank) = Gc.transpose() * detail::factor(view.filtered.vx, c, T.width, T.rank);
  }
  out.grad_field = filter_components_adjoint(gF, kf);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct PlanarEval {
  double warp_error = 0.0;
  double psnr = 0.0;
};

inline double warp_error(const std::vector<SL3Tangent>& warps, const std::vector<SL3Tangent>& gt) {
  if (warps.size() != gt.size() || warps.empty()) throw std::invalid_argument("warp_error: size mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < warps.size(); ++k) {
    double d = 0.0;
    for (int c = 0; c < 8; ++c) d += (warps[k][c] - gt[k][c]) * (warps[k][c] - gt[k][c]);
    s += std::sqrt(d);
  }
  return s / static_cast<double>(warps.size());
}

/// Unfiltered field sampled at ground-truth warps, scored against the patches.
inline PlanarEval eval_planar(const PlanarState& s, const PlanarProblem& p) {
  PlanarEval e;
  e.warp_error = warp_error(s.warps, p.gt_warps);
  const detail::DenseField D = detail::densify(s.field);
  double total = 0.0;
  for (std::size_t k = 0; k < p.count(); ++k) {
    const Eigen::Matrix3d H = exp_sl3(p.gt_warps[k]);
    double se = 0.0;
    for (std::size_t j = 0; j < p.patch_size; ++j)
      for (std::size_t i = 0; i < p.patch_size; ++i) {
        const auto q = apply_homography(H, p.patch_point(i, j));
        const Eigen::Vector2d x = p.frame.to_pixel(*q);
        const auto cr = D.corners(axis_lerp(x.x(), D.width), axis_lerp(x.y(), D.height));
        for (std::size_t c = 0; c < p.image.channels; ++c) {
          const double r = D.sample(cr, c) - p.patches[k].at(i, j, c);
          se += r * r;
        }
      }
    total += psnr_from_mse(se / static_cast<double>(p.patches[k].data.size()));
  }
  e.psnr = total / static_cast<double>(p.count());
  return e;
}

// ---------------------------------------------------------------------------
// Training.

struct PlanarConfig {
  std::uint64_t seed = 0;
  std::uint64_t texture_seed = 0;
  std::size_t image_size = 256;
  std::size_t rank = 32;
  std::size_t patches = 5;
  std::size_t patch_size = 128;
  double perturb_scale = 0.05;
  double offset_radius = 0.35;
  double init_scale = 0.1;
  long iterations = 4000;
  long log_every = 100;
  LrSchedule lr_field{1e-2, 0.1, 4000, 0};
  LrSchedule lr_warp{1e-3, 0.1, 4000, 0};
  KernelSchedule kernel{32.0, 1600, 200.0, false};
  KernelOptions kernel_opts{};
  bool smooth_patches = false;
};

struct PlanarRun {
  PlanarProblem problem;
  PlanarState state;
  PlanarEval initial, final;
  CsvTable metrics{{"step", "warp_error", "psnr", "sigma", "loss"}};
  std::vector<double> losses;  // every step
};

using PlanarCallback = std::function<void(const PlanarRun&)>;

/// Joint Adam descent on field factors and free warps. Throws on a non-finite
/// loss after calling on_divergence with the state at that point.
inline PlanarRun train_planar(const PlanarConfig& cfg, const Image* image = nullptr,
                              const PlanarCallback& on_divergence = {}) {
  PlanarRun run;
  const Image tex = image ? *image : procedural_texture(cfg.image_size, cfg.image_size, cfg.texture_seed);
  Rng noise = make_substream(cfg.seed, "noise");
  run.problem = make_patches(tex, cfg.patches, cfg.patch_size, cfg.perturb_scale, cfg.offset_radius, noise);
  Rng init = make_substream(cfg.seed, "init");
  run.state = initial_state(run.problem, cfg.rank, cfg.init_scale, init);
  run.initial = eval_planar(run.state, run.problem);
  Rng kscale = make_substream(cfg.seed, "kernel-scale");

  ParamGroup field{"field", param_blocks(run.state.field), cfg.lr_field, {}, 0};
  ParamGroup warps{"warps", {}, cfg.lr_warp, {}, 0};
  for (std::size_t k = 1; k < run.state.warps.size(); ++k) warps.params.emplace_back(run.state.warps[k]);

  auto log_row = [&](long step, double sigma, double loss) {
    const PlanarEval e = eval_planar(run.state, run.problem);
    run.metrics.add({step, e.warp_error, e.psnr, sigma, loss});
  };
  std::vector<double> gf, gw;
  for (long step = 0; step < cfg.iterations; ++step) {
    double sigma = schedule_sigma(cfg.kernel, step);
    if (cfg.kernel.random_scaling) sigma *= sample_kernel_scale(kscale);
    const PlanarLoss L = loss_2d(run.state, run.problem, sigma, cfg.smooth_patches ? sigma : 0.0, cfg.kernel_opts);
    if (!std::isfinite(L.loss)) {
      if (on_divergence) on_divergence(run);
      throw std::runtime_error("align2d diverged at step " + std::to_string(step));
    }
    run.losses.push_back(L.loss);
    if (step % cfg.log_every == 0) log_row(step, sigma, L.loss);
    gf.assign(L.grad_field.vx.begin(), L.grad_field.vx.end());
    gf.insert(gf.end(), L.grad_field.vy.begin(), L.grad_field.vy.end());
    adam_step(field, gf, step);
    gw.clear();
    for (std::size_t k = 1; k < L.grad_warps.size(); ++k) gw.insert(gw.end(), L.grad_warps[k].begin(), L.grad_warps[k].end());
    if (!gw.empty()) adam_step(warps, gw, step);
    run.state.step = step + 1;
  }
  const double final_loss = loss_2d(run.state, run.problem, 0.0, 0.0, cfg.kernel_opts, false).loss;
  log_row(cfg.iterations, 0.0, final_loss);
  run.final = eval_planar(run.state, run.problem);
  return run;
}

// ---------------------------------------------------------------------------
// Visualisation.

namespace detail {
inline void draw_line(Image& img, Eigen::Vector2d a, Eigen::Vector2d b, const std::array<double, 3>& col) {
  const int n = static_cast<int>(std::ceil((b - a).norm())) + 1;
  for (int s = 0; s <= n; ++s) {
    const Eigen::Vector2d x = a + (b - a) * (static_cast<double>(s) / n);
    const long px = std::lround(x.x()), py = std::lround(x.y());
    if (px < 0 || py < 0 || px >= static_cast<long>(img.width) || py >= static_cast<long>(img.height)) continue;
    for (int c = 0; c < 3; ++c) img.at(static_cast<std::size_t>(px), static_cast<std::size_t>(py), c) = col[c];
  }
}
}  // namespace detail

/// Patch outlines over a dimmed copy of the image: ground truth in green,
/// the given warps in red.
inline Image draw_warp_overlay(const PlanarProblem& p, const std::vector<SL3Tangent>& warps) {
  Image img = p.image;
  for (double& v : img.data) v = 0.4 + 0.4 * v;
  const double e = 0.5 * static_cast<double>(p.patch_size) / p.frame.scale;
  const std::array<Eigen::Vector2d, 4> corners{Eigen::Vector2d(-e, -e), Eigen::Vector2d(e, -e), Eigen::Vector2d(e, e),
                                               Eigen::Vector2d(-e, e)};
  auto box = [&](const SL3Tangent& w, const std::array<double, 3>& col) {
    const Eigen::Matrix3d H = exp_sl3(w);
    for (int c = 0; c < 4; ++c) {
      const auto a = apply_homography(H, corners[c]), b = apply_homography(H, corners[(c + 1) % 4]);
      if (a && b) detail::draw_line(img, p.frame.to_pixel(*a), p.frame.to_pixel(*b), col);
    }
  };
  for (const auto& w : p.gt_warps) box(w, {0.0, 0.8, 0.0});
  for (const auto& w : warps) box(w, {0.9, 0.0, 0.0});
  return img;
}

}  // namespace tensorpose
