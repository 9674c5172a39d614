// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpose/render.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tensorpose/optim.hpp"
#include "tensorpose/sepconv.hpp"

namespace tensorpose {
namespace {

struct ToyFields {
  VMTensor3D density;
  FeatureTensor3D appearance;
  MLPDecoder decoder;

  RenderFields view() const { return {&density, &appearance, &decoder}; }
};

ToyFields make_fields(std::uint64_t seed, std::size_t n = 4) {
  Rng rng = make_substream(seed, "fields");
  ToyFields f{init_random({n, n, n}, 2, 0.9, rng), init_random_feature({n, n, n}, 2, 3, 0.8, 0.8, rng),
              MLPDecoder(3, 8)};
  f.decoder.init(rng);
  for (std::size_t i = f.decoder.off_b1(); i < f.decoder.off_w2(); ++i) f.decoder.params[i] = 0.3;
  return f;
}

RenderConfig toy_config() {
  RenderConfig c;
  c.samples = 24;
  c.near = 1.5;
  c.far = 4.5;
  c.background = {1.0, 0.9, 0.8};
  c.density_shift = 0.0;
  return c;
}

TEST(Decoder, ZeroWeightsGiveSigmoidBias) {
  MLPDecoder S(4, 6);
  S.params[S.off_b2() + 0] = 0.3;
  S.params[S.off_b2() + 2] = -1.0;
  const auto c = decode_color(S, {1, 2, 3, 4}, Eigen::Vector3d(0, 0, 1));
  EXPECT_DOUBLE_EQ(c[0], sigmoid(0.3));
  EXPECT_DOUBLE_EQ(c[1], 0.5);
  EXPECT_DOUBLE_EQ(c[2], sigmoid(-1.0));
  EXPECT_EQ(S.parameter_count(), 6u * 4 + 6 + 3 * (6 + 27) + 3);
  EXPECT_THROW(decode_color(S, {1, 2, NAN, 4}, Eigen::Vector3d(0, 0, 1)), std::invalid_argument);
  EXPECT_THROW(decode_color(S, {1, 2}, Eigen::Vector3d(0, 0, 1)), std::invalid_argument);
}

TEST(Decoder, OutputInUnitCube) {
  Rng rng = make_substream(2, "t");
  MLPDecoder S(5, 16);
  S.init(rng);
  for (auto& p : S.params) p *= 20.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> f(5);
    for (auto& v : f) v = 10 * normal01(rng);
    const auto c = decode_color(S, f, Eigen::Vector3d(normal01(rng), normal01(rng), normal01(rng)).normalized());
    for (int k = 0; k < 3; ++k) {
      EXPECT_GE(c[k], 0.0);
      EXPECT_LE(c[k], 1.0);
    }
  }
}

TEST(Decoder, BackwardMatchesFiniteDifferences) {
  Rng rng = make_substream(3, "t");
  for (int trial = 0; trial < 5; ++trial) {
    MLPDecoder S(4, 10);
    S.init(rng);
    for (std::size_t i = S.off_b1(); i < S.off_w2(); ++i) S.params[i] = 0.2 * normal01(rng);
    std::vector<double> feat(4);
    for (auto& v : feat) v = normal01(rng);
    Eigen::Vector3d dir(normal01(rng), normal01(rng), normal01(rng));
    dir.normalize();
    const double w[3] = {0.7, -1.1, 0.4};
    auto loss = [&] {
      const auto c = decode_color(S, feat, dir);
      return w[0] * c[0] + w[1] * c[1] + w[2] * c[2];
    };
    double enc[kViewEncodingDim], z[3], rgb[3], gpre[3], genc[kViewEncodingDim];
    std::vector<double> h(S.hidden), gh(S.hidden), gfeat(4), gp(S.parameter_count(), 0.0);
    encode_view(dir, enc);
    S.view_term(enc, z);
    S.forward(feat.data(), z, h.data(), rgb);
    S.backward(feat.data(), h.data(), rgb, w, gp.data(), gpre, gfeat.data(), gh.data());
    S.backward_view(enc, gpre, gp.data(), genc);
    const Eigen::Vector3d gdir = encode_view_backward(dir, genc);

    GradCheckOptions opt;
    opt.abs_floor = 1e-8;
    EXPECT_LE(grad_check(loss, {std::span<double>(S.params)}, gp, opt).max_rel_error, 1e-5);
    EXPECT_LE(grad_check(loss, {std::span<double>(feat)}, gfeat, opt).max_rel_error, 1e-5);
    const std::vector<double> gd{gdir[0], gdir[1], gdir[2]};
    EXPECT_LE(grad_check(loss, {std::span<double>(dir.data(), 3)}, gd, opt).max_rel_error, 1e-5);
  }
}

TEST(VolumeRender, EmptyMediumGivesBackground) {
  const Eigen::Vector3d bg(0.2, 0.4, 0.6);
  const auto c = volume_render(std::vector<double>(10, 0.0), std::vector<Eigen::Vector3d>(10, Eigen::Vector3d::Ones()),
                               std::vector<double>(10, 0.1), bg);
  EXPECT_EQ(c.rgb, bg);
}

TEST(VolumeRender, OpaqueFirstSampleGivesItsColor) {
  std::vector<double> sigma{1e6, 3.0, 2.0};
  std::vector<Eigen::Vector3d> color{{0.1, 0.2, 0.3}, {1, 1, 1}, {0, 1, 0}};
  const auto c = volume_render(sigma, color, {0.5, 0.5, 0.5}, Eigen::Vector3d::Ones());
  EXPECT_EQ(c.rgb, color[0]);
}

TEST(VolumeRender, WeightsConserveProbability) {
  Rng rng = make_substream(4, "t");
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + rng() % 300;
    std::vector<double> sigma(n), delta(n);
    for (std::size_t k = 0; k < n; ++k) {
      sigma[k] = std::exp(4 * normal01(rng));
      delta[k] = 0.001 + 0.1 * uniform01(rng);
    }
    const auto c = volume_render(sigma, std::vector<Eigen::Vector3d>(n, Eigen::Vector3d::Zero()), delta,
                                 Eigen::Vector3d::Zero());
    double s = c.transmittance.back();
    for (double w : c.weights) s += w;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(VolumeRender, HomogeneousMediumClosedForm) {
  const std::size_t N = 256;
  const double sigma0 = 1.7, D = 2.0;
  const Eigen::Vector3d col(0.9, 0.1, 0.5), bg(1, 1, 1);
  // each of the N samples owns an interval D / N of the ray
  const auto c = volume_render(std::vector<double>(N, sigma0), std::vector<Eigen::Vector3d>(N, col),
                               std::vector<double>(N, D / N), bg);
  const Eigen::Vector3d expect = col * (1 - std::exp(-sigma0 * D)) + std::exp(-sigma0 * D) * bg;
  EXPECT_LE((c.rgb - expect).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LE((c.rgb - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(VolumeRender, MoreDensityNeverRaisesLaterTransmittance) {
  Rng rng = make_substream(5, "t");
  std::vector<double> sigma(20), delta(20, 0.05);
  for (auto& s : sigma) s = uniform01(rng) * 3;
  const std::vector<Eigen::Vector3d> col(20, Eigen::Vector3d::Zero());
  const auto a = volume_render(sigma, col, delta, Eigen::Vector3d::Zero());
  sigma[7] += 2.0;
  const auto b = volume_render(sigma, col, delta, Eigen::Vector3d::Zero());
  for (std::size_t m = 0; m <= 20; ++m) {
    if (m <= 7) EXPECT_EQ(a.transmittance[m], b.transmittance[m]);
    else EXPECT_LT(b.transmittance[m], a.transmittance[m]);
  }
}

TEST(VolumeRender, BackwardMatchesFiniteDifferences) {
  Rng rng = make_substream(6, "t");
  const std::size_t n = 16;
  std::vector<double> sigma(n), delta(n);
  std::vector<Eigen::Vector3d> color(n);
  for (std::size_t k = 0; k < n; ++k) {
    sigma[k] = 2 * uniform01(rng);
    delta[k] = 0.1;
    color[k] = Eigen::Vector3d(uniform01(rng), uniform01(rng), uniform01(rng));
  }
  const Eigen::Vector3d bg(0.3, 0.6, 0.9), w(1.0, -0.5, 2.0);
  std::vector<double> gs;
  std::vector<Eigen::Vector3d> gc;
  volume_render_backward(sigma, color, delta, bg, w, gs, gc);
  auto loss = [&] { return w.dot(volume_render(sigma, color, delta, bg).rgb); };
  EXPECT_LE(grad_check(loss, {std::span<double>(sigma)}, gs).max_rel_error, 1e-6);
  std::vector<double> flat;
  for (const auto& c : gc) flat.insert(flat.end(), c.data(), c.data() + 3);
  std::vector<std::span<double>> blocks;
  for (auto& c : color) blocks.emplace_back(c.data(), 3);
  EXPECT_LE(grad_check(loss, blocks, flat).max_rel_error, 1e-6);
}

TEST(TraceRay, MissingRayReturnsBackground) {
  const auto f = make_fields(7);
  const auto cfg = toy_config();
  const Eigen::Vector3d c = trace_ray(f.view(), {3.0, 3.0, -3.0}, {0.0, 0.0, 1.0}, cfg);
  EXPECT_EQ(c, cfg.background);
}

TEST(TraceRay, ImpulseFilteredFieldsRenderIdentically) {
  const auto f = make_fields(8);
  const auto k = make_kernel_1d(0.0, 3);
  const auto fd = filter_components_3d(f.density, k);
  const auto fa = filter_components_3d(f.appearance, k);
  const RenderFields rf{&fd.filtered, &fa.filtered, &f.decoder};
  const auto cfg = toy_config();
  const Eigen::Vector3d o(0.1, -0.2, -3.0), d(0.05, 0.1, 1.0);
  EXPECT_EQ(trace_ray(rf, o, d, cfg), trace_ray(f.view(), o, d, cfg));
}

TEST(TraceRay, QuadratureConvergesWithSamples) {
  auto f = make_fields(9, 6);
  auto cfg = toy_config();
  const Eigen::Vector3d o(0.2, 0.1, -3.0), d(-0.1, 0.05, 1.0);
  std::vector<Eigen::Vector3d> c;
  for (std::size_t n : {64u, 128u, 256u, 512u}) {
    cfg.samples = n;
    c.push_back(trace_ray(f.view(), o, d, cfg));
  }
  const double e1 = (c[1] - c[0]).norm(), e2 = (c[2] - c[1]).norm(), e3 = (c[3] - c[2]).norm();
  EXPECT_LT(e2, e1);
  EXPECT_LT(e3, e2);
  EXPECT_LT(e3, 1e-2);
}

struct RayCase {
  Eigen::Vector3d o, d, w;
};

TEST(TraceRay, GradientsMatchFiniteDifferences) {
  auto f = make_fields(10);
  const auto cfg = toy_config();
  Rng rng = make_substream(10, "rays");
  std::vector<RayCase> rays;
  for (int i = 0; i < 3; ++i)
    rays.push_back({Eigen::Vector3d(0.3 * normal01(rng), 0.3 * normal01(rng), -3.0),
                    Eigen::Vector3d(0.1 * normal01(rng), 0.1 * normal01(rng), 1.0),
                    Eigen::Vector3d(normal01(rng), normal01(rng), normal01(rng))});
  auto loss = [&] {
    double s = 0.0;
    for (const auto& r : rays) s += r.w.dot(trace_ray(f.view(), r.o, r.d, cfg));
    return s;
  };
  VMTensor3D gd(f.density.dims, f.density.rank);
  FeatureTensor3D ga(f.appearance.dims(), f.appearance.rank(), f.appearance.features);
  std::vector<double> gdec(f.decoder.parameter_count(), 0.0);
  const RenderGrads grads{&gd, &ga, &gdec};
  std::vector<RayGrad> rg(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i)
    trace_ray(f.view(), rays[i].o, rays[i].d, cfg, &rays[i].w, &grads, &rg[i]);

  EXPECT_LE(grad_check(loss, param_blocks(f.density), flatten(gd)).max_rel_error, 1e-4);
  EXPECT_LE(grad_check(loss, param_blocks(f.appearance), flatten(ga)).max_rel_error, 1e-4);
  EXPECT_LE(grad_check(loss, {std::span<double>(f.decoder.params)}, gdec).max_rel_error, 1e-4);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    auto one = [&] { return rays[i].w.dot(trace_ray(f.view(), rays[i].o, rays[i].d, cfg)); };
    const std::vector<double> go{rg[i].origin[0], rg[i].origin[1], rg[i].origin[2]};
    const std::vector<double> gdir{rg[i].dir[0], rg[i].dir[1], rg[i].dir[2]};
    EXPECT_LE(grad_check(one, {std::span<double>(rays[i].o.data(), 3)}, go).max_rel_error, 1e-4);
    EXPECT_LE(grad_check(one, {std::span<double>(rays[i].d.data(), 3)}, gdir).max_rel_error, 1e-4);
  }
}

TEST(TraceRay, PoseGradientThroughExponential) {
  auto f = make_fields(11);
  const auto cfg = toy_config();
  const auto K = Intrinsics::from_fov(8, 8, 0.6);
  const Pose base = look_at({0.4, -0.3, -3.0}, {0, 0, 0}, {0, -1, 0});
  SE3Tangent delta{0.01, -0.02, 0.015, 0.02, -0.01, 0.005};
  const Eigen::Vector3d w(0.5, 1.0, -0.7);
  auto loss = [&] {
    const Pose p = perturbed_pose(base, delta);
    double s = 0.0;
    for (std::size_t y = 0; y < 8; y += 3)
      for (std::size_t x = 0; x < 8; x += 3) s += w.dot(render_pixel(f.view(), p, K, pixel_center(x, y), cfg));
    return s;
  };
  std::array<double, 12> dM{};
  const Pose p = perturbed_pose(base, delta);
  for (std::size_t y = 0; y < 8; y += 3)
    for (std::size_t x = 0; x < 8; x += 3) {
      const Eigen::Vector2d uv = pixel_center(x, y);
      const Ray r = camera_ray(K, p, uv);
      RayGrad g;
      trace_ray(f.view(), r.origin, r.dir, cfg, &w, nullptr, &g);
      accumulate_pose_matrix_grad(g, K.unproject(uv), dM);
    }
  const SE3Tangent gdelta = chain_pose_grad(base, delta, dM);
  EXPECT_LE(grad_check(loss, {std::span<double>(delta)}, gdelta).max_rel_error, 1e-4);
}

TEST(RenderImage, MatchesPixelLoopAndEmptyScene) {
  auto f = make_fields(12);
  auto cfg = toy_config();
  const auto K = Intrinsics::from_fov(6, 5, 0.7);
  const Pose pose = look_at({0, 0, -3.2}, {0, 0, 0}, {0, -1, 0});
  const Image img = render_image(f.view(), pose, K, 6, 5, cfg);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      const auto c = render_pixel(f.view(), pose, K, pixel_center(x, y), cfg);
      for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(img.at(x, y, ch), c[ch]);
    }
  f.density.set_zero();
  cfg.density_shift = -800.0;
  const Image bg = render_image(f.view(), pose, K, 6, 5, cfg);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 6; ++x)
      for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(bg.at(x, y, ch), cfg.background[ch]);
}

TEST(RenderImage, PoseSweepStaysFiniteAndContinuous) {
  auto f = make_fields(13);
  const auto cfg = toy_config();
  const auto K = Intrinsics::from_fov(5, 5, 0.7);
  const Pose base = look_at({0, 0, -3.2}, {0, 0, 0}, {0, -1, 0});
  Image prev = render_image(f.view(), base, K, 5, 5, cfg);
  for (int i = 1; i <= 30; ++i) {
    const double e = 0.01 * i;
    const Image cur = render_image(f.view(), perturbed_pose(base, SE3Tangent{e, -e, e, e, e, -e}), K, 5, 5, cfg);
    for (double v : cur.data) ASSERT_TRUE(std::isfinite(v));
    double worst = 0.0;
    for (std::size_t k = 0; k < cur.data.size(); ++k) worst = std::max(worst, std::abs(cur.data[k] - prev.data[k]));
    EXPECT_LT(worst, 0.2) << "step " << e;
    prev = cur;
  }
}

}  // namespace
}  // namespace tensorpose
