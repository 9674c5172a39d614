// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

// Lie-algebra warps, pinhole cameras, ray sampling and pose metrics.
//
// Camera convention: camera-to-world rigid transforms, camera axes x right,
// y down, z forward. Pixel (col, row) has its centre at (col + 0.5, row + 0.5).

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorpose/dual.hpp"

namespace tensorpose {

using SE3Tangent = std::array<double, 6>;  // (translation xyz, rotation xyz)
using SL3Tangent = std::array<double, 8>;

// ---------------------------------------------------------------------------
// Small row-major matrices over any scalar (double or Dual).

template <class S>
using M3 = std::array<S, 9>;

template <class S>
M3<S> m3_identity() {
  M3<S> m{};
  for (auto& x : m) x = S(0.0);
  m[0] = m[4] = m[8] = S(1.0);
  return m;
}

template <class S>
M3<S> m3_mul(const M3<S>& a, const M3<S>& b) {
  M3<S> c;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) c[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
  return c;
}

// ---------------------------------------------------------------------------
// se(3)

/// Rodrigues exponential; returns the row-major 3x4 block [R | t].
template <class S>
std::array<S, 12> exp_se3_rt(const std::array<S, 6>& xi) {
  const S wx = xi[3], wy = xi[4], wz = xi[5];
  const S th2 = wx * wx + wy * wy + wz * wz;
  S A, B, C;  // sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3
  if (value_of(th2) < 1e-12) {
    A = 1.0 - th2 / 6.0;
    B = 0.5 - th2 / 24.0;
    C = 1.0 / 6.0 - th2 / 120.0;
  } else {
    using std::cos;
    using std::sin;
    using std::sqrt;
    const S th = sqrt(th2);
    const S s = sin(th), h = sin(th * 0.5);
    A = s / th;
    B = 2.0 * h * h / th2;
    // t - sin t cancels badly for small t
    if (value_of(th2) < 1e-4)
      C = 1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0 - th2 * th2 * th2 / 362880.0;
    else
      C = (th - s) / (th2 * th);
  }
  // W = hat(w), W2 = W * W
  const M3<S> W{S(0.0), -wz, wy, wz, S(0.0), -wx, -wy, wx, S(0.0)};
  const M3<S> W2 = m3_mul(W, W);
  const M3<S> I = m3_identity<S>();
  std::array<S, 12> out;
  M3<S> V;
  for (int i = 0; i < 9; ++i) {
    const S r = I[i] + A * W[i] + B * W2[i];
    out[(i / 3) * 4 + i % 3] = r;
    V[i] = I[i] + B * W[i] + C * W2[i];
  }
  for (int i = 0; i < 3; ++i) out[i * 4 + 3] = V[i * 3] * xi[0] + V[i * 3 + 1] * xi[1] + V[i * 3 + 2] * xi[2];
  return out;
}

inline Eigen::Matrix4d exp_se3(const SE3Tangent& xi) {
  const auto rt = exp_se3_rt<double>(xi);
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = rt[i * 4 + j];
  return m;
}

// ---------------------------------------------------------------------------
// sl(3)

/// Generators: x/y translation, rotation, isotropic scale, two shears, two
/// perspective terms. All traceless.
inline const std::array<Eigen::Matrix3d, 8>& sl3_generators() {
  static const std::array<Eigen::Matrix3d, 8> g = [] {
    std::array<Eigen::Matrix3d, 8> m;
    for (auto& x : m) x.setZero();
    m[0](0, 2) = 1;
    m[1](1, 2) = 1;
    m[2](0, 1) = -1, m[2](1, 0) = 1;
    m[3](0, 0) = 1, m[3](1, 1) = 1, m[3](2, 2) = -2;
    m[4](0, 0) = 1, m[4](1, 1) = -1;
    m[5](0, 1) = 1, m[5](1, 0) = 1;
    m[6](2, 0) = 1;
    m[7](2, 1) = 1;
    return m;
  }();
  return g;
}

template <class S>
M3<S> sl3_hat(const std::array<S, 8>& xi) {
  const auto& g = sl3_generators();
  M3<S> a;
  for (auto& x : a) x = S(0.0);
  for (int k = 0; k < 8; ++k)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (g[k](i, j) != 0.0) a[i * 3 + j] += xi[k] * g[k](i, j);
  return a;
}

/// Matrix exponential by scaling and squaring around a degree-16 Taylor core.
template <class S>
M3<S> expm3(const M3<S>& a) {
  double norm = 0.0;
  for (int i = 0; i < 3; ++i)
    norm = std::max(norm, std::abs(value_of(a[i * 3])) + std::abs(value_of(a[i * 3 + 1])) +
                              std::abs(value_of(a[i * 3 + 2])));
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const double scale = std::ldexp(1.0, -squarings);
  M3<S> x;
  for (int i = 0; i < 9; ++i) x[i] = a[i] * scale;
  const M3<S> I = m3_identity<S>();
  M3<S> e = I;
  for (int k = 16; k >= 1; --k) {
    M3<S> t = m3_mul(x, e);
    for (int i = 0; i < 9; ++i) e[i] = I[i] + t[i] / static_cast<double>(k);
  }
  for (int s = 0; s < squarings; ++s) e = m3_mul(e, e);
  return e;
}

template <class S>
M3<S> exp_sl3_t(const std::array<S, 8>& xi) {
  return expm3(sl3_hat(xi));
}

inline Eigen::Matrix3d exp_sl3(const SL3Tangent& xi) {
  const auto e = exp_sl3_t<double>(xi);
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = e[i * 3 + j];
  return m;
}

/// Projective application of H; nullopt at (or numerically near) infinity.
inline std::optional<Eigen::Vector2d> apply_homography(const Eigen::Matrix3d& H,
                                                       const Eigen::Vector2d& u) {
  const Eigen::Vector3d p = H * Eigen::Vector3d(u.x(), u.y(), 1.0);
  if (!(std::abs(p.z()) > 1e-12) || !p.allFinite()) return std::nullopt;
  return Eigen::Vector2d(p.x() / p.z(), p.y() / p.z());
}

inline std::optional<Eigen::Vector2d> warp2d(const SL3Tangent& P, const Eigen::Vector2d& u) {
  return apply_homography(exp_sl3(P), u);
}

// ---------------------------------------------------------------------------
// Cameras and rays.

struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

  Intrinsics() = default;
  Intrinsics(double fx_, double fy_, double cx_, double cy_) : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(cx) || !std::isfinite(cy))
      throw std::invalid_argument("Intrinsics: focal lengths must be positive and finite");
  }

  /// Principal point at the image centre, horizontal field of view fov_x.
  static Intrinsics from_fov(std::size_t width, std::size_t height, double fov_x) {
    const double f = 0.5 * static_cast<double>(width) / std::tan(0.5 * fov_x);
    return {f, f, 0.5 * static_cast<double>(width), 0.5 * static_cast<double>(height)};
  }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d K;
    K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return K;
  }

  /// K^-1 [u, v, 1].
  Eigen::Vector3d unproject(const Eigen::Vector2d& uv) const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("degenerate intrinsics");
    return {(uv.x() - cx) / fx, (uv.y() - cy) / fy, 1.0};
  }
};

inline Eigen::Vector2d pixel_center(std::size_t col, std::size_t row) {
  return {static_cast<double>(col) + 0.5, static_cast<double>(row) + 0.5};
}

/// Rigid camera-to-world transform.
struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = R;
    m.topRightCorner<3, 1>() = t;
    return m;
  }
  static Pose from_matrix(const Eigen::Matrix4d& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }
  Pose operator*(const Pose& o) const { return {R * o.R, R * o.t + t}; }
  Pose inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  Eigen::Vector3d center() const { return t; }
};

inline Pose pose_exp(const SE3Tangent& xi) { return Pose::from_matrix(exp_se3(xi)); }

/// Camera at `eye` looking at `target`; `up` fixes the roll (image y points
/// away from it).
inline Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                    const Eigen::Vector3d& up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = z.cross(up);
  if (x.norm() < 1e-9) x = z.cross(Eigen::Vector3d::UnitX());
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Pose p;
  p.R.col(0) = x;
  p.R.col(1) = y;
  p.R.col(2) = z;
  p.t = eye;
  return p;
}

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d dir;  // not normalized: unit depth along the optical axis
};

inline Ray camera_ray(const Intrinsics& K, const Pose& pose, const Eigen::Vector2d& uv) {
  return {pose.t, pose.R * K.unproject(uv)};
}

struct RaySamples {
  Eigen::Vector3d origin;
  Eigen::Vector3d dir;
  std::vector<double> t;
  std::vector<Eigen::Vector3d> points;
  std::vector<double> deltas;  // spacing owned by each sample
};

inline RaySamples sample_ray(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double near,
                             double far, std::size_t n) {
  if (n < 2) throw std::invalid_argument("sample_ray: need at least 2 samples");
  if (!(far > near) || !(near > 0.0)) throw std::invalid_argument("sample_ray: need far > near > 0");
  RaySamples r{o, d, {}, {}, {}};
  const double step = (far - near) / static_cast<double>(n - 1);
  const double delta = step * d.norm();
  r.t.resize(n);
  r.points.resize(n);
  r.deltas.assign(n, delta);
  for (std::size_t i = 0; i < n; ++i) {
    r.t[i] = near + step * static_cast<double>(i);
    r.points[i] = o + r.t[i] * d;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Procrustes alignment and pose errors.

struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  bool degenerate = false;

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * (R * p) + t; }
  Pose apply(const Pose& p) const { return {R * p.R, apply(p.t)}; }
  /// Inverse map: reference frame back to the estimated one.
  Pose unapply(const Pose& p) const { return {R.transpose() * p.R, R.transpose() * (p.t - t) / scale}; }
};

struct ProcrustesResult {
  Similarity sim;
  std::vector<Pose> aligned;
  double residual_rms = 0.0;
};

/// Least-squares similarity taking estimated camera centres onto the
/// reference ones (Umeyama).
inline ProcrustesResult procrustes_align(const std::vector<Pose>& est, const std::vector<Pose>& gt) {
  if (est.size() != gt.size()) throw std::invalid_argument("procrustes_align: size mismatch");
  if (est.size() < 3) throw std::invalid_argument("procrustes_align: need at least 3 poses");
  const double n = static_cast<double>(est.size());
  Eigen::Vector3d mx = Eigen::Vector3d::Zero(), my = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    mx += est[i].t;
    my += gt[i].t;
  }
  mx /= n;
  my /= n;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_x = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Eigen::Vector3d dx = est[i].t - mx, dy = gt[i].t - my;
    cov += dy * dx.transpose();
    var_x += dx.squaredNorm();
  }
  cov /= n;
  var_x /= n;

  ProcrustesResult res;
  Similarity& sim = res.sim;
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) S(2, 2) = -1.0;
  sim.degenerate = !(var_x > 0.0) || sv(1) <= 1e-12 * std::max(sv(0), 1e-300);
  sim.R = svd.matrixU() * S * svd.matrixV().transpose();
  sim.scale = var_x > 0.0 ? (sv.asDiagonal() * S).trace() / var_x : 1.0;
  sim.t = my - sim.scale * (sim.R * mx);

  double sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    res.aligned.push_back(sim.apply(est[i]));
    sq += (res.aligned.back().t - gt[i].t).squaredNorm();
  }
  res.residual_rms = std::sqrt(sq / n);
  return res;
}

/// Geodesic angle between two rotations, in degrees.
inline double rotation_angle_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const Eigen::Matrix3d r = a.transpose() * b;
  const Eigen::Vector3d axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = 0.5 * axis.norm(), c = 0.5 * (r.trace() - 1.0);
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

struct PoseErrors {
  double rotation_deg = 0.0;
  double translation = 0.0;
};

inline PoseErrors pose_errors(const std::vector<Pose>& aligned, const std::vector<Pose>& gt) {
  if (aligned.size() != gt.size() || gt.empty()) throw std::invalid_argument("pose_errors: size mismatch");
  PoseErrors e;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    e.rotation_deg += rotation_angle_deg(aligned[i].R, gt[i].R);
    e.translation += (aligned[i].t - gt[i].t).norm();
  }
  e.rotation_deg /= static_cast<double>(gt.size());
  e.translation /= static_cast<double>(gt.size());
  return e;
}

// ---------------------------------------------------------------------------
// Plain-text tangent lists: one camera per line, whitespace separated.

inline std::string format_tangents(const std::vector<std::vector<double>>& rows) {
  std::ostringstream os;
  char buf[40];
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", r[i]);
      os << (i ? " " : "") << buf;
    }
    os << '\n';
  }
  return os.str();
}

inline std::vector<std::vector<double>> parse_tangents(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::vector<double> r;
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument("bad number in pose file: " + tok);
      r.push_back(v);
    }
    if (r.empty()) continue;
    if (r.size() != 6 && r.size() != 8)
      throw std::invalid_argument("pose line must hold 6 or 8 values");
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_tangents(const std::string& path, const std::vector<std::vector<double>>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << format_tangents(rows);
}

inline std::vector<std::vector<double>> read_tangents(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_tangents(ss.str());
}

}  // namespace tensorpose
