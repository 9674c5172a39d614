// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

// Self-checks shared by the command-line tool and the acceptance suite:
// filter-vs-oracle cases and gradient checks of the training losses.

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "tensorpose/align2d.hpp"
#include "tensorpose/joint3d.hpp"
#include "tensorpose/optim.hpp"
#include "tensorpose/sepconv.hpp"

namespace tensorpose {

struct ConvCase {
  Dims3 dims{};
  std::size_t rank = 0;
  double sigma = 0.0;
  std::size_t length = 0;
  double max_abs_diff = 0.0;
};

/// Random VM tensors (dims <= max_dim, rank <= max_rank, sigma in [0.5, 2])
/// filtered component-wise and densely. Kernels fit inside the smallest dim.
inline std::vector<ConvCase> verify_conv_cases(std::size_t cases, std::uint64_t seed = 0,
                                               std::size_t max_dim = 16, std::size_t max_rank = 4) {
  Rng rng = make_substream(seed, "verify-conv");
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng() % (hi - lo + 1)); };
  std::vector<ConvCase> out;
  for (std::size_t c = 0; c < cases; ++c) {
    ConvCase r;
    r.dims = {pick(4, max_dim), pick(4, max_dim), pick(4, max_dim)};
    r.rank = pick(1, max_rank);
    r.sigma = 0.5 + 1.5 * uniform01(rng);
    r.length = default_kernel_length(r.sigma, std::min({r.dims[0], r.dims[1], r.dims[2]}));
    const VMTensor3D t = init_random(r.dims, r.rank, 1.0, rng);
    const GaussianKernel1D k = make_kernel_1d(r.sigma, r.length);
    const DenseGrid3D fast = reconstruct_dense(filter_components_3d(t, k).filtered);
    const DenseGrid3D slow = brute_force_conv3d(reconstruct_dense(t), make_kernel_3d(k));
    r.max_abs_diff = max_abs_diff(fast, slow);
    out.push_back(r);
  }
  return out;
}

struct GradcheckEntry {
  std::string name;
  GradCheckReport report;
};

/// Photometric loss of a 4^3 field seen by 2 cameras at 8x8 pixels, checked
/// against central differences for every parameter group.
inline std::vector<GradcheckEntry> gradcheck_joint3d(std::uint64_t seed = 0) {
  SceneConfig sc;
  sc.views = 2;
  sc.image_size = 8;
  sc.blobs = 3;
  sc.blob_radius_min = 0.2;
  sc.blob_radius_max = 0.35;
  sc.gt_grid = 16;
  sc.gt_samples = 32;
  Rng scene_rng = make_substream(seed, "scene");
  const Scene3DProblem p = make_toy_scene(sc, scene_rng);

  Joint3DConfig cfg;
  cfg.seed = seed;
  cfg.scene = sc;
  cfg.grid_schedule = {4};
  cfg.density_rank = 2;
  cfg.appearance_rank = 2;
  cfg.features = 4;
  cfg.hidden = 6;
  cfg.init_scale = 0.5;
  Joint3DState s = initial_joint_state(cfg, p);
  Rng rng = make_substream(seed, "gradcheck");
  for (double& w : s.decoder.params) w += 0.3 * normal01(rng);
  for (auto& d : s.delta)
    for (double& x : d) x = 0.02 * normal01(rng);

  RenderConfig rc;
  rc.samples = 24;
  rc.near = sc.near;
  rc.far = sc.far;
  rc.density_shift = 0.5;

  std::vector<RaySample> batch;
  for (std::uint32_t v = 0; v < 2; ++v)
    for (std::uint32_t y = 0; y < 8; ++y)
      for (std::uint32_t x = 0; x < 8; ++x) batch.push_back({v, x, y});
  std::vector<std::vector<double>> edge(2, std::vector<double>(64, 1.0));
  for (auto& e : edge)
    for (std::size_t i = 0; i < e.size(); i += 3) e[i] = 1.5;
  const LossKernels k{0.7, 0.5, 3};
  const LossWeights w{1.0, 0.0, 0.0};

  const JointLoss L = total_loss(s, p, k, p.images, &edge, w, batch, rc);
  auto loss = [&] { return total_loss(s, p, k, p.images, &edge, w, batch, rc).total; };

  GradCheckOptions opt;
  opt.seed = seed;
  std::vector<GradcheckEntry> out;
  out.push_back({"density", grad_check(loss, param_blocks(s.density), flatten(L.grad_density), opt)});
  out.push_back({"appearance", grad_check(loss, param_blocks(s.appearance), flatten(L.grad_appearance), opt)});
  out.push_back({"decoder", grad_check(loss, {std::span<double>(s.decoder.params)}, L.grad_decoder, opt)});
  std::vector<std::span<double>> pose_blocks;
  std::vector<double> pose_grad;
  for (std::size_t v = 0; v < s.delta.size(); ++v) {
    pose_blocks.emplace_back(s.delta[v]);
    pose_grad.insert(pose_grad.end(), L.grad_delta[v].begin(), L.grad_delta[v].end());
  }
  out.push_back({"pose", grad_check(loss, pose_blocks, pose_grad, opt)});
  return out;
}

/// Planar alignment loss on a 48x48 texture with three 16x16 patches.
inline std::vector<GradcheckEntry> gradcheck_align2d(std::uint64_t seed = 0) {
  Rng noise = make_substream(seed, "noise");
  const PlanarProblem p = make_patches(procedural_texture(48, 48, 3), 3, 16, 0.06, 0.3, noise);
  Rng init = make_substream(seed, "init");
  PlanarState s{init_random_2d(48, 48, 3, 3, 0.5, init), p.gt_warps, 0};
  for (auto& w : s.warps)
    for (double& x : w) x += 0.01 * normal01(init);
  const PlanarLoss L = loss_2d(s, p, 1.5, 0.0);
  auto loss = [&] { return loss_2d(s, p, 1.5, 0.0, {}, false).loss; };
  GradCheckOptions opt;
  opt.seed = seed;
  opt.max_coords = 300;
  std::vector<GradcheckEntry> out;
  std::vector<double> gf = L.grad_field.vx;
  gf.insert(gf.end(), L.grad_field.vy.begin(), L.grad_field.vy.end());
  out.push_back({"field2d", grad_check(loss, param_blocks(s.field), gf, opt)});
  std::vector<std::span<double>> wb;
  std::vector<double> gw;
  for (std::size_t i = 0; i < p.count(); ++i) {
    wb.emplace_back(s.warps[i]);
    gw.insert(gw.end(), L.grad_warps[i].begin(), L.grad_warps[i].end());
  }
  opt.max_coords = 0;
  out.push_back({"warps", grad_check(loss, wb, gw, opt)});
  return out;
}

}  // namespace tensorpose
