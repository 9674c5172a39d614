// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

// Volume rendering of factorized fields and the appearance decoder.
//
// Transmittance is exclusive, T_n = exp(-sum_{j<n} sigma_j delta_j), so the
// sample weights w_n = T_n alpha_n and the residual T_{N+1} sum to one.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tensorpose/dual.hpp"
#include "tensorpose/geometry.hpp"
#include "tensorpose/image.hpp"
#include "tensorpose/parallel.hpp"
#include "tensorpose/random.hpp"
#include "tensorpose/tensorfield.hpp"

namespace tensorpose {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Decoder: feature -> ReLU hidden layer -> [hidden, enc(dir)] -> sigmoid rgb.

inline constexpr std::size_t kViewFrequencies = 4;
inline constexpr std::size_t kViewEncodingDim = 3 + 6 * kViewFrequencies;

/// [d, sin(2^l d), cos(2^l d)] for l < kViewFrequencies.
inline void encode_view(const Eigen::Vector3d& d, double* enc) {
  for (int i = 0; i < 3; ++i) enc[i] = d[i];
  for (std::size_t l = 0; l < kViewFrequencies; ++l) {
    const double f = std::ldexp(1.0, static_cast<int>(l));
    for (int i = 0; i < 3; ++i) {
      enc[3 + 6 * l + i] = std::sin(f * d[i]);
      enc[3 + 6 * l + 3 + i] = std::cos(f * d[i]);
    }
  }
}

/// Adjoint of encode_view.
inline Eigen::Vector3d encode_view_backward(const Eigen::Vector3d& d, const double* genc) {
  Eigen::Vector3d g(genc[0], genc[1], genc[2]);
  for (std::size_t l = 0; l < kViewFrequencies; ++l) {
    const double f = std::ldexp(1.0, static_cast<int>(l));
    for (int i = 0; i < 3; ++i)
      g[i] += f * (std::cos(f * d[i]) * genc[3 + 6 * l + i] - std::sin(f * d[i]) * genc[3 + 6 * l + 3 + i]);
  }
  return g;
}

struct MLPDecoder {
  std::size_t in = 0;
  std::size_t hidden = 32;
  std::vector<double> params;  // W1 (hidden x in), b1, W2 (3 x (hidden + enc)), b2

  MLPDecoder() = default;
  MLPDecoder(std::size_t in_dim, std::size_t hidden_dim) : in(in_dim), hidden(hidden_dim) {
    if (in == 0 || hidden == 0) throw std::invalid_argument("MLPDecoder: widths must be positive");
    params.assign(parameter_count(), 0.0);
  }

  std::size_t width2() const { return hidden + kViewEncodingDim; }
  std::size_t parameter_count() const { return hidden * in + hidden + 3 * width2() + 3; }
  std::size_t off_b1() const { return hidden * in; }
  std::size_t off_w2() const { return off_b1() + hidden; }
  std::size_t off_b2() const { return off_w2() + 3 * width2(); }

  const double* W1() const { return params.data(); }
  const double* b1() const { return params.data() + off_b1(); }
  const double* W2() const { return params.data() + off_w2(); }
  const double* b2() const { return params.data() + off_b2(); }

  /// He-style normal init for W1, Xavier for W2, zero biases.
  void init(Rng& rng) {
    const double s1 = std::sqrt(2.0 / static_cast<double>(in));
    const double s2 = std::sqrt(1.0 / static_cast<double>(width2()));
    for (std::size_t i = 0; i < off_b1(); ++i) params[i] = s1 * normal01(rng);
    for (std::size_t i = off_b1(); i < off_w2(); ++i) params[i] = 0.0;
    for (std::size_t i = off_w2(); i < off_b2(); ++i) params[i] = s2 * normal01(rng);
    for (std::size_t i = off_b2(); i < params.size(); ++i) params[i] = 0.0;
  }

  /// View-dependent part of the output pre-activation: W2[:, hidden:] enc + b2.
  void view_term(const double* enc, double* z) const {
    for (int o = 0; o < 3; ++o) {
      const double* w = W2() + o * width2() + hidden;
      double s = b2()[o];
      for (std::size_t e = 0; e < kViewEncodingDim; ++e) s += w[e] * enc[e];
      z[o] = s;
    }
  }

  /// Forward pass given a precomputed view term. h receives the hidden
  /// activations (post-ReLU), rgb the output.
  void forward(const double* feat, const double* zview, double* h, double* rgb) const {
    const double* w1 = W1();
    const double* bb = b1();
    for (std::size_t j = 0; j < hidden; ++j) {
      double s = bb[j];
      const double* row = w1 + j * in;
      for (std::size_t g = 0; g < in; ++g) s += row[g] * feat[g];
      h[j] = s > 0.0 ? s : 0.0;
    }
    for (int o = 0; o < 3; ++o) {
      const double* w = W2() + o * width2();
      double s = zview[o];
      for (std::size_t j = 0; j < hidden; ++j) s += w[j] * h[j];
      rgb[o] = sigmoid(s);
    }
  }

  /// Backward through forward(). Accumulates parameter gradients except the
  /// view-encoding block of W2 and b2 (left to the caller, who sums gpre over
  /// a ray). gpre receives dL/d(pre-sigmoid); gfeat receives dL/dfeat.
  void backward(const double* feat, const double* h, const double* rgb, const double* grgb,
                double* gparams, double* gpre, double* gfeat, double* scratch) const {
    for (int o = 0; o < 3; ++o) gpre[o] = grgb[o] * rgb[o] * (1.0 - rgb[o]);
    double* gh = scratch;
    for (std::size_t j = 0; j < hidden; ++j) gh[j] = 0.0;
    for (int o = 0; o < 3; ++o) {
      const double* w = W2() + o * width2();
      double* gw = gparams + off_w2() + o * width2();
      for (std::size_t j = 0; j < hidden; ++j) {
        gw[j] += gpre[o] * h[j];
        gh[j] += gpre[o] * w[j];
      }
    }
    for (std::size_t g = 0; g < in; ++g) gfeat[g] = 0.0;
    const double* w1 = W1();
    for (std::size_t j = 0; j < hidden; ++j) {
      if (h[j] <= 0.0 || gh[j] == 0.0) continue;
      const double gj = gh[j];
      gparams[off_b1() + j] += gj;
      double* gw = gparams + j * in;
      const double* row = w1 + j * in;
      for (std::size_t g = 0; g < in; ++g) {
        gw[g] += gj * feat[g];
        gfeat[g] += gj * row[g];
      }
    }
  }

  /// Adds the view-block gradient for a summed gpre and returns dL/denc.
  void backward_view(const double* enc, const double* gpre_sum, double* gparams, double* genc) const {
    for (std::size_t e = 0; e < kViewEncodingDim; ++e) genc[e] = 0.0;
    for (int o = 0; o < 3; ++o) {
      const double* w = W2() + o * width2() + hidden;
      double* gw = gparams + off_w2() + o * width2() + hidden;
      for (std::size_t e = 0; e < kViewEncodingDim; ++e) {
        gw[e] += gpre_sum[o] * enc[e];
        genc[e] += gpre_sum[o] * w[e];
      }
      gparams[off_b2() + o] += gpre_sum[o];
    }
  }
};

/// Single colour query; dir must be unit length.
inline Eigen::Vector3d decode_color(const MLPDecoder& S, const std::vector<double>& feature,
                                    const Eigen::Vector3d& dir) {
  if (feature.size() != S.in) throw std::invalid_argument("decode_color: feature size mismatch");
  for (double f : feature)
    if (!std::isfinite(f)) throw std::invalid_argument("decode_color: non-finite feature");
  if (!dir.allFinite()) throw std::invalid_argument("decode_color: non-finite direction");
  double enc[kViewEncodingDim], z[3], rgb[3];
  std::vector<double> h(S.hidden);
  encode_view(dir, enc);
  S.view_term(enc, z);
  S.forward(feature.data(), z, h.data(), rgb);
  return {rgb[0], rgb[1], rgb[2]};
}

// ---------------------------------------------------------------------------
// Compositing.

struct Composite {
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  std::vector<double> transmittance;  // T_1..T_{N+1}
  std::vector<double> weights;        // w_n = T_n alpha_n
};

inline Composite volume_render(const std::vector<double>& sigma, const std::vector<Eigen::Vector3d>& color,
                               const std::vector<double>& delta, const Eigen::Vector3d& background) {
  const std::size_t n = sigma.size();
  if (color.size() != n || delta.size() != n) throw std::invalid_argument("volume_render: size mismatch");
  Composite out;
  out.transmittance.resize(n + 1);
  out.weights.resize(n);
  double T = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.transmittance[i] = T;
    const double tau = sigma[i] * delta[i];
    const double alpha = -std::expm1(-tau);
    out.weights[i] = T * alpha;
    out.rgb += out.weights[i] * color[i];
    T *= std::exp(-tau);
  }
  out.transmittance[n] = T;
  out.rgb += T * background;
  return out;
}

/// Gradients of dot(grad_rgb, rgb) w.r.t. densities and colours.
inline void volume_render_backward(const std::vector<double>& sigma,
                                   const std::vector<Eigen::Vector3d>& color,
                                   const std::vector<double>& delta, const Eigen::Vector3d& background,
                                   const Eigen::Vector3d& grad_rgb, std::vector<double>& gsigma,
                                   std::vector<Eigen::Vector3d>& gcolor) {
  const Composite c = volume_render(sigma, color, delta, background);
  const std::size_t n = sigma.size();
  gsigma.assign(n, 0.0);
  gcolor.assign(n, Eigen::Vector3d::Zero());
  // behind = sum_{k>m} w_k c_k + T_{N+1} bg, built back to front
  double behind = c.transmittance[n] * grad_rgb.dot(background);
  for (std::size_t m = n; m-- > 0;) {
    const double gc = grad_rgb.dot(color[m]);
    gcolor[m] = c.weights[m] * grad_rgb;
    gsigma[m] = delta[m] * (c.transmittance[m + 1] * gc - behind);
    behind += c.weights[m] * gc;
  }
}

// ---------------------------------------------------------------------------
// Field rendering.

struct RenderConfig {
  std::size_t samples = 64;
  double near = 2.0;
  double far = 5.0;
  Eigen::Vector3d background = Eigen::Vector3d::Ones();
  double density_shift = -2.0;  // added before the softplus
  double box_lo = -1.0;         // scene box [lo, hi]^3 mapped onto the grid
  double box_hi = 1.0;
};

/// Read-only view of the (already filtered) fields used for rendering.
struct RenderFields {
  const VMTensor3D* density = nullptr;
  const FeatureTensor3D* appearance = nullptr;
  const MLPDecoder* decoder = nullptr;
};

/// Gradient buffers matching RenderFields. Any pointer may be null to skip.
struct RenderGrads {
  VMTensor3D* density = nullptr;
  FeatureTensor3D* appearance = nullptr;
  std::vector<double>* decoder = nullptr;
};

struct RayGrad {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d dir = Eigen::Vector3d::Zero();
};

namespace detail {

inline bool inside_box(const Eigen::Vector3d& p, const RenderConfig& cfg) {
  for (int i = 0; i < 3; ++i)
    if (p[i] < cfg.box_lo || p[i] > cfg.box_hi) return false;
  return true;
}

inline std::array<double, 3> to_grid(const Eigen::Vector3d& p, const Dims3& dims, const RenderConfig& cfg) {
  const double span = cfg.box_hi - cfg.box_lo;
  return {(p[0] - cfg.box_lo) / span * static_cast<double>(dims[0] - 1),
          (p[1] - cfg.box_lo) / span * static_cast<double>(dims[1] - 1),
          (p[2] - cfg.box_lo) / span * static_cast<double>(dims[2] - 1)};
}

/// Per-thread scratch for one ray.
struct RayScratch {
  std::vector<double> sigma, delta, raw, t;
  std::vector<Eigen::Vector3d> color, points;
  std::vector<unsigned char> active;
  std::vector<PointStencil> dstencil, astencil;
  std::vector<double> acoef, feat, hidden, rgb;
  std::vector<double> gcoef, gfeat, gh, gpos;
  RaySamples samples;
  double enc[kViewEncodingDim];
  double dnorm = 1.0;
  Eigen::Vector3d vdir;
};

inline RayScratch& ray_scratch() {
  thread_local RayScratch s;
  return s;
}

}  // namespace detail

/// Forward pass of one ray. Keeps what the backward pass needs in
/// thread-local scratch.
inline Eigen::Vector3d trace_ray_forward(const RenderFields& f, const Eigen::Vector3d& origin,
                                         const Eigen::Vector3d& dir, const RenderConfig& cfg) {
  const VMTensor3D& dens = *f.density;
  const FeatureTensor3D& app = *f.appearance;
  const MLPDecoder& S = *f.decoder;
  const std::size_t N = cfg.samples;
  const std::size_t Rd = dens.rank, Ra = app.rank(), G = app.features, H = S.hidden;
  if (G != S.in) throw std::invalid_argument("trace_ray: decoder input does not match feature dim");

  auto& s = detail::ray_scratch();
  RaySamples rs = sample_ray(origin, dir, cfg.near, cfg.far, N);
  s.sigma.assign(N, 0.0);
  s.raw.assign(N, 0.0);
  s.color.assign(N, Eigen::Vector3d::Zero());
  s.active.assign(N, 0);
  s.dstencil.resize(N);
  s.astencil.resize(N);
  s.acoef.resize(N * 3 * Ra);
  s.feat.resize(N * G);
  s.hidden.resize(N * H);
  s.rgb.resize(N * 3);
  std::vector<double>& dcoef = s.gcoef;
  dcoef.resize(3 * std::max(Rd, Ra));

  const double dnorm = dir.norm();
  const Eigen::Vector3d vdir = dir / dnorm;
  double enc[kViewEncodingDim], zview[3];
  encode_view(vdir, enc);
  S.view_term(enc, zview);

  for (std::size_t n = 0; n < N; ++n) {
    if (!detail::inside_box(rs.points[n], cfg)) continue;
    s.active[n] = 1;
    s.dstencil[n] = make_stencil(dens.dims, detail::to_grid(rs.points[n], dens.dims, cfg));
    vm_coefficients(dens, s.dstencil[n], dcoef.data());
    double raw = 0.0;
    for (std::size_t i = 0; i < 3 * Rd; ++i) raw += dcoef[i];
    s.raw[n] = raw;
    s.sigma[n] = softplus(raw + cfg.density_shift);

    s.astencil[n] = make_stencil(app.dims(), detail::to_grid(rs.points[n], app.dims(), cfg));
    double* ac = &s.acoef[n * 3 * Ra];
    vm_coefficients(app.comps, s.astencil[n], ac);
    double* ft = &s.feat[n * G];
    compose_features(app, ac, ft);
    double* rgb = &s.rgb[n * 3];
    S.forward(ft, zview, &s.hidden[n * H], rgb);
    s.color[n] = Eigen::Vector3d(rgb[0], rgb[1], rgb[2]);
  }
  const Eigen::Vector3d rgb = volume_render(s.sigma, s.color, rs.deltas, cfg.background).rgb;
  s.samples = std::move(rs);
  s.dnorm = dnorm;
  s.vdir = vdir;
  std::copy(enc, enc + kViewEncodingDim, s.enc);
  return rgb;
}

/// Back-propagates dot(grad_rgb, rgb) for the ray last traced by
/// trace_ray_forward on this thread, with the same fields and config.
inline void trace_ray_backward(const RenderFields& f, const RenderConfig& cfg, const Eigen::Vector3d& gr,
                               const RenderGrads* grads, RayGrad* ray_grad) {
  const VMTensor3D& dens = *f.density;
  const FeatureTensor3D& app = *f.appearance;
  const MLPDecoder& S = *f.decoder;
  const std::size_t N = cfg.samples;
  const std::size_t Rd = dens.rank, Ra = app.rank(), G = app.features;
  const std::size_t H = S.hidden;
  auto& s = detail::ray_scratch();
  const RaySamples& rs = s.samples;
  const double dnorm = s.dnorm;
  const Eigen::Vector3d vdir = s.vdir;
  const double* enc = s.enc;
  std::vector<double> gsigma;
  std::vector<Eigen::Vector3d> gcolor;
  volume_render_backward(s.sigma, s.color, rs.deltas, cfg.background, gr, gsigma, gcolor);

  const double step = (cfg.far - cfg.near) / static_cast<double>(N - 1);
  const double span = cfg.box_hi - cfg.box_lo;
  RayGrad rg;
  double gpre_sum[3] = {0.0, 0.0, 0.0};
  s.gfeat.resize(G);
  s.gh.resize(H);
  s.gpos.resize(3);
  std::vector<double> gacoef(3 * Ra);
  std::vector<double> gdcoef(3 * Rd);
  double ddelta_sum = 0.0;  // d/d|dir| through the sample spacing
  std::vector<double> dec_sink;
  double* gdec = grads && grads->decoder ? grads->decoder->data() : nullptr;
  if (!gdec) {
    dec_sink.assign(S.parameter_count(), 0.0);
    gdec = dec_sink.data();
  }

  for (std::size_t n = 0; n < N; ++n) {
    if (!s.active[n]) continue;
    double gpos_d[3] = {0.0, 0.0, 0.0}, gpos_a[3] = {0.0, 0.0, 0.0};

    // density: sigma = softplus(raw + shift), raw = sum of coefficients
    const double graw = gsigma[n] * sigmoid(s.raw[n] + cfg.density_shift);
    // gsigma = delta * X  =>  d/d delta = sigma * X
    ddelta_sum += s.sigma[n] * gsigma[n] / rs.deltas[n];
    if (graw != 0.0) {
      std::fill(gdcoef.begin(), gdcoef.end(), graw);
      vm_backward(dens, s.dstencil[n], gdcoef.data(), grads ? grads->density : nullptr,
                  ray_grad ? gpos_d : nullptr);
    }

    // appearance
    const double grgb[3] = {gcolor[n][0], gcolor[n][1], gcolor[n][2]};
    if (grgb[0] != 0.0 || grgb[1] != 0.0 || grgb[2] != 0.0) {
      double gpre[3];
      const double* ft = &s.feat[n * G];
      S.backward(ft, &s.hidden[n * H], &s.rgb[n * 3], grgb, gdec, gpre, s.gfeat.data(), s.gh.data());
      for (int o = 0; o < 3; ++o) gpre_sum[o] += gpre[o];
      // features: feat[g] = sum_{a,r} coef[a,r] * basis[a][r,g]
      const double* ac = &s.acoef[n * 3 * Ra];
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t r = 0; r < Ra; ++r) {
          const double* b = &app.basis[a][r * G];
          double acc = 0.0;
          for (std::size_t g = 0; g < G; ++g) acc += b[g] * s.gfeat[g];
          gacoef[a * Ra + r] = acc;
          if (grads && grads->appearance) {
            double* gb = &grads->appearance->basis[a][r * G];
            const double c = ac[a * Ra + r];
            for (std::size_t g = 0; g < G; ++g) gb[g] += c * s.gfeat[g];
          }
        }
      vm_backward(app.comps, s.astencil[n], gacoef.data(),
                  grads && grads->appearance ? &grads->appearance->comps : nullptr,
                  ray_grad ? gpos_a : nullptr);
    }

    if (ray_grad) {
      // grid coordinate -> world point -> (origin, dir)
      Eigen::Vector3d gp;
      for (int i = 0; i < 3; ++i)
        gp[i] = gpos_d[i] * static_cast<double>(dens.dims[i] - 1) / span +
                gpos_a[i] * static_cast<double>(app.dims()[i] - 1) / span;
      rg.origin += gp;
      rg.dir += rs.t[n] * gp;
    }
  }

  double genc[kViewEncodingDim];
  S.backward_view(enc, gpre_sum, gdec, genc);
  if (ray_grad) {
    const Eigen::Vector3d gv = encode_view_backward(vdir, genc);
    // unit direction: d(d/|d|) = (I - v v^T) / |d|
    rg.dir += (gv - vdir * vdir.dot(gv)) / dnorm;
    // spacing delta = step * |d|
    rg.dir += ddelta_sum * step * vdir;
    *ray_grad = rg;
  }
}

/// Renders one ray; with grad_rgb set, also back-propagates dot(grad_rgb, rgb)
/// into grads and returns the ray-space gradient in ray_grad.
inline Eigen::Vector3d trace_ray(const RenderFields& f, const Eigen::Vector3d& origin,
                                 const Eigen::Vector3d& dir, const RenderConfig& cfg,
                                 const Eigen::Vector3d* grad_rgb = nullptr,
                                 const RenderGrads* grads = nullptr, RayGrad* ray_grad = nullptr) {
  const Eigen::Vector3d rgb = trace_ray_forward(f, origin, dir, cfg);
  if (grad_rgb) trace_ray_backward(f, cfg, *grad_rgb, grads, ray_grad);
  return rgb;
}

inline Eigen::Vector3d render_pixel(const RenderFields& f, const Pose& pose, const Intrinsics& K,
                                    const Eigen::Vector2d& uv, const RenderConfig& cfg) {
  const Ray r = camera_ray(K, pose, uv);
  return trace_ray(f, r.origin, r.dir, cfg);
}

inline Image render_image(const RenderFields& f, const Pose& pose, const Intrinsics& K,
                          std::size_t width, std::size_t height, const RenderConfig& cfg) {
  Image img(width, height, 3);
  parallel_chunks(height, [&](std::size_t y) {
    for (std::size_t x = 0; x < width; ++x) {
      const Eigen::Vector3d c = render_pixel(f, pose, K, pixel_center(x, y), cfg);
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
    }
  });
  return img;
}

// ---------------------------------------------------------------------------
// Pose chain rule.

/// Accumulates dL/d[R | t] (row-major 3x4) for a ray built as
/// origin = t, dir = R d_cam.
inline void accumulate_pose_matrix_grad(const RayGrad& g, const Eigen::Vector3d& d_cam,
                                        std::array<double, 12>& dM) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) dM[i * 4 + j] += g.dir[i] * d_cam[j];
    dM[i * 4 + 3] += g.origin[i];
  }
}

/// Camera-to-world pose base * exp(delta) as a 3x4 block over any scalar.
template <class S>
std::array<S, 12> perturbed_pose(const Pose& base, const std::array<S, 6>& delta) {
  const auto e = exp_se3_rt(delta);
  std::array<S, 12> out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      S acc(0.0);
      for (int k = 0; k < 3; ++k) acc += base.R(i, k) * e[k * 4 + j];
      out[i * 4 + j] = acc;
    }
    S acc(base.t[i]);
    for (int k = 0; k < 3; ++k) acc += base.R(i, k) * e[k * 4 + 3];
    out[i * 4 + 3] = acc;
  }
  return out;
}

inline Pose perturbed_pose(const Pose& base, const SE3Tangent& delta) {
  const auto m = perturbed_pose<double>(base, delta);
  Pose p;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) p.R(i, j) = m[i * 4 + j];
    p.t[i] = m[i * 4 + 3];
  }
  return p;
}

/// dL/d(delta) from dL/d[R | t] for pose = base * exp(delta).
inline SE3Tangent chain_pose_grad(const Pose& base, const SE3Tangent& delta, const std::array<double, 12>& dM) {
  std::array<Dual<6>, 6> x;
  for (std::size_t i = 0; i < 6; ++i) x[i] = Dual<6>::variable(delta[i], i);
  const auto m = perturbed_pose(base, x);
  SE3Tangent g{};
  for (std::size_t e = 0; e < 12; ++e)
    for (std::size_t i = 0; i < 6; ++i) g[i] += dM[e] * m[e].d[i];
  return g;
}

}  // namespace tensorpose
