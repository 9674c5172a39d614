// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

// Joint reconstruction of a factorized radiance field and camera poses on a
// small synthetic scene: blurred supervision, randomly scaled kernels, an
// edge-weighted photometric term, L1 / TV regularizers and test-time pose
// refinement.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorpose/csv.hpp"
#include "tensorpose/geometry.hpp"
#include "tensorpose/image.hpp"
#include "tensorpose/kernels.hpp"
#include "tensorpose/log.hpp"
#include "tensorpose/optim.hpp"
#include "tensorpose/parallel.hpp"
#include "tensorpose/random.hpp"
#include "tensorpose/render.hpp"
#include "tensorpose/sepconv.hpp"
#include "tensorpose/tensorfield.hpp"

namespace tensorpose {

// ---------------------------------------------------------------------------
// Scene.

struct SceneConfig {
  std::size_t views = 6;
  std::size_t image_size = 48;
  double radius = 2.0;
  double fov_x = 1.4;
  std::size_t blobs = 20;
  double blob_extent = 0.8;  // centres uniform in [-e, e]^3
  double blob_radius_min = 0.08;
  double blob_radius_max = 0.15;
  double stripe_period = 0.0;  // colour stripes along blob b's axis b % 3; 0 disables
  std::size_t gt_grid = 64;
  std::size_t gt_samples = 128;
  double near = 0.2;
  double far = 3.8;
};

struct Scene3DProblem {
  VMTensor3D gt_density;
  FeatureTensor3D gt_appearance;
  MLPDecoder gt_decoder;
  RenderConfig gt_render;
  Intrinsics K;
  std::size_t width = 0, height = 0;
  std::vector<Pose> gt_poses;
  std::vector<Image> images;

  RenderFields gt_fields() const { return {&gt_density, &gt_appearance, &gt_decoder}; }
  std::size_t views() const { return gt_poses.size(); }
};

/// Camera k of n on a sphere, alternating above and below the equator.
inline Pose orbit_pose(std::size_t k, std::size_t n, double radius) {
  const double az = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(n, 1));
  const double el = (k % 2 == 0 ? 0.45 : -0.2);
  const Eigen::Vector3d eye(radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
                            radius * std::sin(el));
  return look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ());
}

/// Blob mixture stored exactly as rank-one VM terms on the x-mode.
/// Density raw = sum_k a_k g_k(x) + base; colour = sigmoid(sum_k c_k h_k(x))
/// with h_k a wider copy of g_k.
inline Scene3DProblem make_toy_scene(const SceneConfig& cfg, Rng& rng) {
  if (cfg.views == 0 || cfg.image_size == 0) throw std::invalid_argument("make_toy_scene: empty camera set");
  Scene3DProblem p;
  const std::size_t n = cfg.gt_grid, B = cfg.blobs;
  const Dims3 dims{n, n, n};
  p.gt_density = VMTensor3D(dims, B + 1);
  p.gt_appearance = FeatureTensor3D(dims, std::max<std::size_t>(B, 1), 3);
  auto coord = [&](std::size_t i) { return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1); };
  // without blobs the base is pushed far enough down that images equal the background exactly
  const double base = B > 0 ? -10.0 : -60.0;
  for (std::size_t i = 0; i < n; ++i) p.gt_density.v(0, i, B) = 1.0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k) p.gt_density.m(0, j, k, B) = base;
  for (std::size_t b = 0; b < B; ++b) {
    Eigen::Vector3d c;
    for (int a = 0; a < 3; ++a) c[a] = cfg.blob_extent * (2.0 * uniform01(rng) - 1.0);
    const double r = cfg.blob_radius_min + (cfg.blob_radius_max - cfg.blob_radius_min) * uniform01(rng);
    const double amp = 14.0 + 4.0 * uniform01(rng);
    std::array<double, 3> logit;
    for (auto& l : logit) l = -2.5 + 5.0 * uniform01(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = coord(i) - c.x();
      p.gt_density.v(0, i, b) = std::exp(-0.5 * dx * dx / (r * r));
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) {
        const double dy = coord(j) - c.y(), dz = coord(k) - c.z();
        p.gt_density.m(0, j, k, b) = amp * std::exp(-0.5 * (dy * dy + dz * dz) / (r * r));
      }
    const std::size_t a = b % 3;
    const auto [pa, qa] = plane_axes(a);
    const double ra2 = 2.56 * r * r;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = coord(i) - c[static_cast<int>(a)];
      const double stripe = cfg.stripe_period > 0.0 ? std::cos(2.0 * M_PI * d / cfg.stripe_period) : 1.0;
      p.gt_appearance.comps.v(a, i, b) = std::exp(-0.5 * d * d / ra2) * stripe;
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) {
        const double dp = coord(j) - c[static_cast<int>(pa)], dq = coord(k) - c[static_cast<int>(qa)];
        p.gt_appearance.comps.m(a, j, k, b) = std::exp(-0.5 * (dp * dp + dq * dq) / ra2);
      }
    for (int g = 0; g < 3; ++g) p.gt_appearance.b(a, b, g) = logit[g];
  }
  // h = relu(f + 10), rgb = sigmoid(h - 10) = sigmoid(f) for f > -10
  p.gt_decoder = MLPDecoder(3, 3);
  auto& w = p.gt_decoder.params;
  for (int i = 0; i < 3; ++i) {
    w[i * 3 + i] = 1.0;
    w[p.gt_decoder.off_b1() + i] = 10.0;
    w[p.gt_decoder.off_w2() + i * p.gt_decoder.width2() + i] = 1.0;
    w[p.gt_decoder.off_b2() + i] = -10.0;
  }
  p.gt_render.samples = cfg.gt_samples;
  p.gt_render.near = cfg.near;
  p.gt_render.far = cfg.far;
  p.gt_render.density_shift = 0.0;
  p.width = p.height = cfg.image_size;
  p.K = Intrinsics::from_fov(p.width, p.height, cfg.fov_x);
  for (std::size_t v = 0; v < cfg.views; ++v) {
    p.gt_poses.push_back(orbit_pose(v, cfg.views, cfg.radius));
    p.images.push_back(render_image(p.gt_fields(), p.gt_poses.back(), p.K, p.width, p.height, p.gt_render));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Supervision.

struct EdgeMask {
  std::size_t width = 0, height = 0;
  std::vector<unsigned char> mask;
  double threshold = 0.0;

  std::size_t count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }
  double fraction() const { return mask.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(mask.size()); }
};

/// Sobel magnitude of the channel-mean image (borders replicated); pixels
/// above factor * mean magnitude are edges.
inline EdgeMask sobel_edge_mask(const Image& img, double factor = 1.25) {
  EdgeMask m{img.width, img.height, std::vector<unsigned char>(img.pixel_count(), 0), 0.0};
  if (img.empty()) return m;
  const long W = static_cast<long>(img.width), H = static_cast<long>(img.height);
  std::vector<double> gray(img.pixel_count(), 0.0), mag(img.pixel_count(), 0.0);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < img.channels; ++c) s += img.data[i * img.channels + c];
    gray[i] = s / static_cast<double>(img.channels);
  }
  auto at = [&](long x, long y) {
    x = std::clamp(x, 0L, W - 1);
    y = std::clamp(y, 0L, H - 1);
    return gray[static_cast<std::size_t>(y * W + x)];
  };
  double mean = 0.0;
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      const double gx = at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1) - at(x - 1, y - 1) -
                        2 * at(x - 1, y) - at(x - 1, y + 1);
      const double gy = at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1) - at(x - 1, y - 1) -
                        2 * at(x, y - 1) - at(x + 1, y - 1);
      const double g = std::sqrt(gx * gx + gy * gy);
      mag[static_cast<std::size_t>(y * W + x)] = g;
      mean += g;
    }
  mean /= static_cast<double>(mag.size());
  m.threshold = factor * mean;
  for (std::size_t i = 0; i < mag.size(); ++i) m.mask[i] = mag[i] > m.threshold ? 1 : 0;
  return m;
}

/// Gaussian blur of each image. Borders are padded with `pad` (the scene
/// background) so blurring does not darken the frame.
inline std::vector<Image> smooth_supervision(const std::vector<Image>& images, double sigma,
                                             std::size_t max_length = 129,
                                             const Eigen::Vector3d& pad = Eigen::Vector3d::Zero()) {
  if (sigma < kImpulseSigma) return images;
  const GaussianKernel1D k = make_scheduled_kernel(sigma, max_length);
  std::vector<Image> out;
  out.reserve(images.size());
  for (const Image& img : images) {
    Image shifted = img;
    for (std::size_t i = 0; i < shifted.data.size(); ++i) shifted.data[i] -= pad[static_cast<long>(i % img.channels)];
    Image b = convolve_image(shifted, k);
    for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] += pad[static_cast<long>(i % img.channels)];
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// State and loss.

struct Joint3DState {
  VMTensor3D density;
  FeatureTensor3D appearance;
  MLPDecoder decoder;
  std::vector<Pose> base;           // initial (noisy) camera-to-world poses
  std::vector<SE3Tangent> delta;    // learned corrections: pose = base * exp(delta)
  long step = 0;

  Pose pose(std::size_t v) const { return perturbed_pose(base[v], delta[v]); }
  std::vector<Pose> poses() const {
    std::vector<Pose> out;
    for (std::size_t v = 0; v < base.size(); ++v) out.push_back(pose(v));
    return out;
  }
};

struct RaySample {
  std::uint32_t view = 0, x = 0, y = 0;
};

inline std::vector<RaySample> sample_ray_batch(const Scene3DProblem& p, std::size_t count, Rng& rng) {
  const std::uint64_t per = p.width * p.height, total = per * p.views();
  std::vector<RaySample> b(count);
  for (auto& r : b) {
    const std::uint64_t i = rng() % total;
    r.view = static_cast<std::uint32_t>(i / per);
    r.x = static_cast<std::uint32_t>((i % per) % p.width);
    r.y = static_cast<std::uint32_t>((i % per) / p.width);
  }
  return b;
}

struct LossWeights {
  double photometric = 1.0;  // w1
  double l1 = 1e-4;          // w2
  double tv = 1e-3;          // w3
};

struct LossKernels {
  double sigma_density = 0.0;  // grid units, already randomly scaled
  double sigma_color = 0.0;
  std::size_t max_length = 33;
};

struct JointLoss {
  double total = 0.0, photometric = 0.0, l1 = 0.0, tv = 0.0;
  VMTensor3D grad_density;
  FeatureTensor3D grad_appearance;
  std::vector<double> grad_decoder;
  std::vector<SE3Tangent> grad_delta;
};

/// Number of gradient accumulators per batch; fixed so reductions happen in
/// the same order for any thread count.
inline constexpr std::size_t kLossChunks = 8;

namespace detail {

inline double l1_span(const std::vector<double>& x, std::vector<double>& g, double scale) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += std::abs(x[i]);
    g[i] += scale * (x[i] > 0 ? 1.0 : x[i] < 0 ? -1.0 : 0.0);
  }
  return s;
}

inline double l1_term(const VMTensor3D& t, VMTensor3D* g, double scale) {
  double s = 0.0;
  for (std::size_t a = 0; a < 3; ++a) s += l1_span(t.vec[a], g->vec[a], scale) + l1_span(t.mat[a], g->mat[a], scale);
  return s;
}

inline double tv_pair(double a, double b, double* ga, double* gb, double scale) {
  const double d = b - a, sg = d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0;
  *gb += scale * sg;
  *ga -= scale * sg;
  return std::abs(d);
}

/// Sum of absolute neighbour differences: vectors along their axis, matrices
/// along both axes.
inline double tv_term(const VMTensor3D& t, VMTensor3D* g, double scale) {
  const std::size_t R = t.rank;
  double s = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto [p, q] = plane_axes(a);
    const std::size_t n = t.dims[a], np = t.dims[p], nq = t.dims[q];
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t r = 0; r < R; ++r)
        s += tv_pair(t.vec[a][i * R + r], t.vec[a][(i + 1) * R + r], &g->vec[a][i * R + r],
                     &g->vec[a][(i + 1) * R + r], scale);
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < nq; ++j)
        for (std::size_t r = 0; r < R; ++r) {
          const std::size_t o = (i * nq + j) * R + r;
          if (i + 1 < np) s += tv_pair(t.mat[a][o], t.mat[a][o + nq * R], &g->mat[a][o], &g->mat[a][o + nq * R], scale);
          if (j + 1 < nq) s += tv_pair(t.mat[a][o], t.mat[a][o + R], &g->mat[a][o], &g->mat[a][o + R], scale);
        }
  }
  return s;
}

inline std::size_t tv_count(const VMTensor3D& t) {
  std::size_t n = 0;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto [p, q] = plane_axes(a);
    n += (t.dims[a] - 1) + (t.dims[p] - 1) * t.dims[q] + t.dims[p] * (t.dims[q] - 1);
  }
  return n * t.rank;
}

inline void add_into(VMTensor3D& dst, const VMTensor3D& src) {
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < dst.vec[a].size(); ++i) dst.vec[a][i] += src.vec[a][i];
    for (std::size_t i = 0; i < dst.mat[a].size(); ++i) dst.mat[a][i] += src.mat[a][i];
  }
}

}  // namespace detail

/// w1 * photometric + w2 * L1 + w3 * TV with gradients for every parameter
/// group. targets are the (blurred) supervision images; edge_weights, if
/// given, hold one per-pixel weight map per view. The photometric term is
/// the batch mean of E * |rgb - target|^2; L1 and TV are means over the
/// unfiltered density and appearance components.
inline JointLoss total_loss(const Joint3DState& s, const Scene3DProblem& p, const LossKernels& k,
                            const std::vector<Image>& targets,
                            const std::vector<std::vector<double>>* edge_weights, const LossWeights& w,
                            std::span<const RaySample> batch, const RenderConfig& rc) {
  if (targets.size() != p.views() || s.base.size() != p.views() || s.delta.size() != p.views())
    throw std::invalid_argument("total_loss: view count mismatch");
  JointLoss out;
  out.grad_density = VMTensor3D(s.density.dims, s.density.rank);
  out.grad_appearance = FeatureTensor3D(s.appearance.dims(), s.appearance.rank(), s.appearance.features);
  out.grad_decoder.assign(s.decoder.parameter_count(), 0.0);
  out.grad_delta.assign(p.views(), SE3Tangent{});

  if (w.photometric != 0.0 && !batch.empty()) {
    const GaussianKernel1D kd = make_scheduled_kernel(k.sigma_density, k.max_length);
    const GaussianKernel1D kc = make_scheduled_kernel(k.sigma_color, k.max_length);
    const auto fd = filter_components_3d(s.density, kd);
    const auto fa = filter_components_3d(s.appearance, kc);
    const RenderFields fields{&fd.filtered, &fa.filtered, &s.decoder};
    const std::vector<Pose> poses = s.poses();

    struct Acc {
      VMTensor3D gd;
      FeatureTensor3D ga;
      std::vector<double> gdec;
      std::vector<std::array<double, 12>> dM;
      double loss = 0.0;
    };
    const std::size_t chunks = std::min(kLossChunks, batch.size());
    std::vector<Acc> acc(chunks);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    parallel_chunks(chunks, [&](std::size_t c) {
      Acc& a = acc[c];
      a.gd = VMTensor3D(s.density.dims, s.density.rank);
      a.ga = FeatureTensor3D(s.appearance.dims(), s.appearance.rank(), s.appearance.features);
      a.gdec.assign(s.decoder.parameter_count(), 0.0);
      a.dM.assign(p.views(), std::array<double, 12>{});
      const RenderGrads grads{&a.gd, &a.ga, &a.gdec};
      const std::size_t lo = c * batch.size() / chunks, hi = (c + 1) * batch.size() / chunks;
      for (std::size_t i = lo; i < hi; ++i) {
        const RaySample& r = batch[i];
        const Eigen::Vector2d uv = pixel_center(r.x, r.y);
        const Eigen::Vector3d dcam = p.K.unproject(uv);
        const Pose& pose = poses[r.view];
        const Eigen::Vector3d dir = pose.R * dcam;
        const double E = edge_weights ? (*edge_weights)[r.view][r.y * p.width + r.x] : 1.0;
        const Image& t = targets[r.view];
        const Eigen::Vector3d target(t.at(r.x, r.y, 0), t.at(r.x, r.y, 1), t.at(r.x, r.y, 2));
        const Eigen::Vector3d res = trace_ray_forward(fields, pose.t, dir, rc) - target;
        a.loss += E * res.squaredNorm();
        const Eigen::Vector3d g = (2.0 * w.photometric * E * inv_b) * res;
        RayGrad rg;
        trace_ray_backward(fields, rc, g, &grads, &rg);
        accumulate_pose_matrix_grad(rg, dcam, a.dM[r.view]);
      }
    });
    VMTensor3D gd(s.density.dims, s.density.rank);
    FeatureTensor3D ga(s.appearance.dims(), s.appearance.rank(), s.appearance.features);
    std::vector<std::array<double, 12>> dM(p.views(), std::array<double, 12>{});
    double loss = 0.0;
    for (const Acc& a : acc) {
      loss += a.loss;
      detail::add_into(gd, a.gd);
      detail::add_into(ga.comps, a.ga.comps);
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < ga.basis[b].size(); ++i) ga.basis[b][i] += a.ga.basis[b][i];
      for (std::size_t i = 0; i < a.gdec.size(); ++i) out.grad_decoder[i] += a.gdec[i];
      for (std::size_t v = 0; v < p.views(); ++v)
        for (int e = 0; e < 12; ++e) dM[v][e] += a.dM[v][e];
    }
    out.photometric = loss * inv_b;
    out.grad_density = filter_components_adjoint(gd, kd);
    out.grad_appearance = filter_components_adjoint(ga, kc);
    for (std::size_t v = 0; v < p.views(); ++v) out.grad_delta[v] = chain_pose_grad(s.base[v], s.delta[v], dM[v]);
  }

  const double nl1 = static_cast<double>(s.density.parameter_count() + s.appearance.comps.parameter_count());
  if (w.l1 != 0.0) {
    out.l1 = (detail::l1_term(s.density, &out.grad_density, w.l1 / nl1) +
              detail::l1_term(s.appearance.comps, &out.grad_appearance.comps, w.l1 / nl1)) / nl1;
  }
  const double ntv = static_cast<double>(detail::tv_count(s.density) + detail::tv_count(s.appearance.comps));
  if (w.tv != 0.0) {
    out.tv = (detail::tv_term(s.density, &out.grad_density, w.tv / ntv) +
              detail::tv_term(s.appearance.comps, &out.grad_appearance.comps, w.tv / ntv)) / ntv;
  }
  out.total = w.photometric * out.photometric + w.l1 * out.l1 + w.tv * out.tv;
  return out;
}

// ---------------------------------------------------------------------------
// Training.

struct Joint3DConfig {
  std::uint64_t seed = 0;
  SceneConfig scene;
  double pose_noise = 0.05;
  // model
  std::vector<std::size_t> grid_schedule{16, 32, 48};
  std::size_t density_rank = 8;
  std::size_t appearance_rank = 8;
  std::size_t features = 12;
  std::size_t hidden = 32;
  double init_scale = 0.1;
  // rendering
  std::size_t samples = 64;
  double density_shift = -2.0;
  // optimisation
  long iterations = 3000;
  std::size_t batch = 512;
  LrSchedule lr_tensor{2e-2, 0.1, 3000, 0};
  LrSchedule lr_mlp{1e-3, 0.1, 3000, 0};
  LrSchedule lr_pose{3e-3, 0.1, 3000, 0};
  long pose_reset_step = -1;  // < 0 disables
  LossWeights weights;
  // coarse-to-fine: sigma in voxels of the first grid
  KernelSchedule kernel3d{1.0, 600, 150.0, true};
  KernelSchedule kernel2d{2.0, 600, 150.0, true};
  std::size_t kernel_max_length = 33;
  double edge_weight = 1.5;
  double edge_factor = 1.25;
  long log_every = 100;
};

/// The same problem with every kernel disabled.
inline Joint3DConfig naive_variant(Joint3DConfig c) {
  c.kernel3d.sigma0 = 0.0;
  c.kernel2d.sigma0 = 0.0;
  return c;
}

struct JointMetrics {
  double rot_err_deg = 0.0;
  double trans_err = 0.0;
  double psnr = 0.0;
};

inline PoseErrors aligned_pose_errors(const std::vector<Pose>& est, const std::vector<Pose>& gt) {
  const ProcrustesResult pr = procrustes_align(est, gt);
  return pose_errors(pr.aligned, gt);
}

struct JointRun {
  Scene3DProblem problem;
  Joint3DState state;
  JointMetrics initial, final;
  CsvTable metrics{{"step", "rot_err_deg", "trans_err", "psnr", "sigma_3d", "sigma_2d", "loss"}};
  std::uint64_t filter_builds = 0;
};

inline Joint3DState initial_joint_state(const Joint3DConfig& cfg, const Scene3DProblem& p) {
  Joint3DState s;
  const std::size_t g0 = cfg.grid_schedule.at(0);
  Rng init = make_substream(cfg.seed, "init");
  s.density = init_random({g0, g0, g0}, cfg.density_rank, cfg.init_scale, init);
  s.appearance = init_random_feature({g0, g0, g0}, cfg.appearance_rank, cfg.features, cfg.init_scale, 1.0, init);
  s.decoder = MLPDecoder(cfg.features, cfg.hidden);
  s.decoder.init(init);
  Rng noise = make_substream(cfg.seed, "noise");
  for (const Pose& g : p.gt_poses) {
    SE3Tangent n;
    for (double& x : n) x = cfg.pose_noise * normal01(noise);
    s.base.push_back(perturbed_pose(g, n));
    s.delta.push_back(SE3Tangent{});
  }
  return s;
}

inline RenderConfig training_render_config(const Joint3DConfig& cfg) {
  RenderConfig rc;
  rc.samples = cfg.samples;
  rc.near = cfg.scene.near;
  rc.far = cfg.scene.far;
  rc.density_shift = cfg.density_shift;
  return rc;
}

/// Mean PSNR of every training view rendered at its current pose.
inline double training_psnr(const Joint3DState& s, const Scene3DProblem& p, const RenderConfig& rc) {
  const RenderFields f{&s.density, &s.appearance, &s.decoder};
  double total = 0.0;
  for (std::size_t v = 0; v < p.views(); ++v)
    total += psnr(render_image(f, s.pose(v), p.K, p.width, p.height, rc), p.images[v]);
  return total / static_cast<double>(p.views());
}

inline JointMetrics joint_metrics(const Joint3DState& s, const Scene3DProblem& p, const RenderConfig& rc) {
  const PoseErrors e = aligned_pose_errors(s.poses(), p.gt_poses);
  return {e.rotation_deg, e.translation, training_psnr(s, p, rc)};
}

namespace detail {
inline std::vector<ParamGroup> joint_groups(Joint3DState& s, const Joint3DConfig& cfg) {
  std::vector<ParamGroup> g(4);
  g[0] = {"density", param_blocks(s.density), cfg.lr_tensor, {}, 0};
  g[1] = {"appearance", param_blocks(s.appearance), cfg.lr_tensor, {}, 0};
  g[2] = {"decoder", {std::span<double>(s.decoder.params)}, cfg.lr_mlp, {}, 0};
  g[3] = {"pose", {}, cfg.lr_pose, {}, 0};
  for (auto& d : s.delta) g[3].params.emplace_back(d);
  return g;
}
}  // namespace detail

/// Edge up-weighting runs on odd steps while the kernel schedule is active.
inline bool edge_weighting_active(long step, long cutoff_step) { return step % 2 == 1 && step < cutoff_step; }

using JointCallback = std::function<void(const JointRun&, long step)>;

/// Coarse-to-fine joint optimisation. on_log runs after each metrics row.
inline JointRun train_joint(const Joint3DConfig& cfg, const JointCallback& on_log = {}) {
  if (cfg.grid_schedule.empty()) throw std::invalid_argument("grid_schedule must not be empty");
  JointRun run;
  Rng scene_rng = make_substream(0, "scene");
  run.problem = make_toy_scene(cfg.scene, scene_rng);
  const Scene3DProblem& P = run.problem;
  run.state = initial_joint_state(cfg, P);
  Joint3DState& S = run.state;
  const RenderConfig rc = training_render_config(cfg);
  run.initial = joint_metrics(S, P, rc);

  Rng kscale = make_substream(cfg.seed, "kernel-scale");
  Rng iscale = make_substream(cfg.seed, "image-scale");
  Rng rays = make_substream(cfg.seed, "ray-sampling");
  std::vector<ParamGroup> groups = detail::joint_groups(S, cfg);

  // grid upsampling at even fractions of the kernel cutoff
  std::vector<long> up_steps;
  const std::size_t stages = cfg.grid_schedule.size();
  for (std::size_t i = 1; i < stages; ++i)
    up_steps.push_back(cfg.kernel3d.cutoff_step * static_cast<long>(i) / static_cast<long>(stages));
  std::size_t stage = 0;
  const double g0 = static_cast<double>(cfg.grid_schedule[0] - 1);

  std::vector<std::vector<double>> edge(P.views());
  const std::uint64_t builds0 = filter_build_count();
  double last_sigma2d = -1.0;
  std::vector<Image> targets;
  std::vector<EdgeMask> masks;
  std::vector<double> flat;

  auto log_row = [&](long step, double s3, double s2, double loss) {
    const JointMetrics m = joint_metrics(S, P, rc);
    run.metrics.add({step, m.rot_err_deg, m.trans_err, m.psnr, s3, s2, loss});
    if (on_log) on_log(run, step);
  };

  for (long step = 0; step < cfg.iterations; ++step) {
    while (stage + 1 < stages && step == up_steps[stage]) {
      ++stage;
      const std::size_t d = cfg.grid_schedule[stage];
      S.density = upsample(S.density, {d, d, d});
      S.appearance = upsample(S.appearance, {d, d, d});
      groups = detail::joint_groups(S, cfg);  // fresh Adam state for every group
    }
    if (step == cfg.pose_reset_step) {
      for (auto& d : S.delta) d = SE3Tangent{};
      groups[3].state.reset();
    }
    const double grid_ratio = static_cast<double>(S.density.dims[0] - 1) / g0;
    const double s3 = schedule_sigma(cfg.kernel3d, step) * grid_ratio;
    const double s2 = schedule_sigma(cfg.kernel2d, step);
    const double rd = cfg.kernel3d.random_scaling ? sample_kernel_scale(kscale) : 1.0;
    const double ri = cfg.kernel2d.random_scaling ? sample_kernel_scale(iscale) : 1.0;
    const double sigma2d = s2 * ri;
    if (sigma2d != last_sigma2d) {
      targets = smooth_supervision(P.images, sigma2d, cfg.kernel_max_length, rc.background);
      masks.clear();
      for (const Image& t : targets) masks.push_back(sobel_edge_mask(t, cfg.edge_factor));
      last_sigma2d = sigma2d;
    }
    const bool edges_on = edge_weighting_active(step, cfg.kernel3d.cutoff_step);
    for (std::size_t v = 0; v < P.views(); ++v) {
      edge[v].assign(P.width * P.height, 1.0);
      if (edges_on)
        for (std::size_t i = 0; i < edge[v].size(); ++i)
          if (masks[v].mask[i]) edge[v][i] = cfg.edge_weight;
    }
    const auto batch = sample_ray_batch(P, cfg.batch, rays);
    const LossKernels k{s3 * rd, s3, cfg.kernel_max_length};
    const JointLoss L = total_loss(S, P, k, targets, &edge, cfg.weights, batch, rc);
    if (!std::isfinite(L.total)) throw std::runtime_error("toy3d diverged at step " + std::to_string(step));

    if (step % cfg.log_every == 0) log_row(step, s3 * rd, sigma2d, L.total);
    adam_step(groups[0], flatten(L.grad_density), step);
    adam_step(groups[1], flatten(L.grad_appearance), step);
    adam_step(groups[2], L.grad_decoder, step);
    flat.clear();
    for (const auto& g : L.grad_delta) flat.insert(flat.end(), g.begin(), g.end());
    adam_step(groups[3], flat, step);
    S.step = step + 1;
  }
  run.filter_builds = filter_build_count() - builds0;
  run.final = joint_metrics(S, P, rc);
  run.metrics.add({cfg.iterations, run.final.rot_err_deg, run.final.trans_err, run.final.psnr, 0.0, 0.0, 0.0});
  if (on_log) on_log(run, cfg.iterations);
  return run;
}

// ---------------------------------------------------------------------------
// Test-time pose refinement.

struct PoseRefineOptions {
  long steps = 300;
  std::size_t batch = 512;  // rays per step; 0 = every pixel
  LrSchedule lr{2e-2, 0.1, 300, 0};
  std::uint64_t seed = 0;
};

/// Photometric error of one image against the frozen fields at base*exp(delta),
/// with its gradient w.r.t. delta.
inline double pose_photometric(const RenderFields& f, const Intrinsics& K, const Image& image, const Pose& base,
                               const SE3Tangent& delta, const RenderConfig& rc,
                               std::span<const std::uint32_t> pixels, SE3Tangent* grad) {
  const Pose pose = perturbed_pose(base, delta);
  std::array<double, 12> dM{};
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(pixels.size());
  for (std::uint32_t i : pixels) {
    const std::size_t x = i % image.width, y = i / image.width;
    const Eigen::Vector3d dcam = K.unproject(pixel_center(x, y));
    const Eigen::Vector3d dir = pose.R * dcam;
    const Eigen::Vector3d target(image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2));
    const Eigen::Vector3d res = trace_ray_forward(f, pose.t, dir, rc) - target;
    loss += res.squaredNorm() * inv;
    if (grad) {
      const Eigen::Vector3d g = 2.0 * inv * res;
      RayGrad rg;
      trace_ray_backward(f, rc, g, nullptr, &rg);
      accumulate_pose_matrix_grad(rg, dcam, dM);
    }
  }
  if (grad) *grad = chain_pose_grad(base, delta, dM);
  return loss;
}

/// Adam on a single pose tangent against frozen, unfiltered fields.
inline Pose test_time_pose_opt(const RenderFields& f, const Intrinsics& K, const Image& image, const Pose& init,
                               const RenderConfig& rc, const PoseRefineOptions& opt = {}) {
  SE3Tangent delta{};
  ParamGroup g{"pose", {std::span<double>(delta)}, opt.lr, {}, 0};
  Rng rng = make_substream(opt.seed, "ray-sampling");
  std::vector<std::uint32_t> pixels;
  const std::uint32_t n = static_cast<std::uint32_t>(image.pixel_count());
  for (long step = 0; step < opt.steps; ++step) {
    pixels.clear();
    if (opt.batch == 0 || opt.batch >= n) {
      for (std::uint32_t i = 0; i < n; ++i) pixels.push_back(i);
    } else {
      for (std::size_t i = 0; i < opt.batch; ++i) pixels.push_back(static_cast<std::uint32_t>(rng() % n));
    }
    SE3Tangent grad;
    pose_photometric(f, K, image, init, delta, rc, pixels, &grad);
    adam_step(g, grad, step);
  }
  return perturbed_pose(init, delta);
}

// ---------------------------------------------------------------------------
// Held-out views.

/// Camera v of the held-out set, halfway between neighbouring training views.
inline Pose test_pose(std::size_t v, const SceneConfig& sc) {
  return orbit_pose(2 * v + 1, 2 * sc.views, sc.radius);
}

struct TestView {
  Image gt, raw, refined;
  double psnr_raw = 0.0, psnr_refined = 0.0, ssim_refined = 0.0;
};

/// Renders held-out views in the reconstruction's frame (ground-truth poses
/// mapped through the inverse Procrustes similarity), before and after
/// test-time pose refinement.
inline std::vector<TestView> evaluate_test_views(const JointRun& run, const Joint3DConfig& cfg, std::size_t count,
                                                 const PoseRefineOptions& opt = {}) {
  const Scene3DProblem& P = run.problem;
  const Similarity sim = procrustes_align(run.state.poses(), P.gt_poses).sim;
  const RenderConfig rc = training_render_config(cfg);
  const RenderFields f{&run.state.density, &run.state.appearance, &run.state.decoder};
  std::vector<TestView> out;
  for (std::size_t v = 0; v < count; ++v) {
    const Pose gt_pose = test_pose(v, cfg.scene);
    TestView t;
    t.gt = render_image(P.gt_fields(), gt_pose, P.K, P.width, P.height, P.gt_render);
    const Pose init = sim.unapply(gt_pose);
    t.raw = render_image(f, init, P.K, P.width, P.height, rc);
    const Pose refined = test_time_pose_opt(f, P.K, t.gt, init, rc, opt);
    t.refined = render_image(f, refined, P.K, P.width, P.height, rc);
    t.psnr_raw = psnr(t.raw, t.gt);
    t.psnr_refined = psnr(t.refined, t.gt);
    t.ssim_refined = ssim(t.refined, t.gt);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace tensorpose
