// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

// Exact alignment analysis for periodic band-limited 1D signals.
//
// A signal is a finite Fourier series f(x) = sum_k c_k exp(i 2 pi k x / T)
// with c_{-k} = conj(c_k); only k >= 0 is stored. Shifts, filtering and the
// alignment loss all have closed forms in this basis.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorpose/csv.hpp"
#include "tensorpose/kernels.hpp"
#include "tensorpose/parallel.hpp"
#include "tensorpose/random.hpp"

namespace tensorpose {

using cplx = std::complex<double>;

struct FourierSignal {
  double period = 1.0;
  std::vector<cplx> c;  // c[k] for k = 0..K

  FourierSignal() = default;
  FourierSignal(double T, std::vector<cplx> coeffs) : period(T), c(std::move(coeffs)) {
    if (!(T > 0.0)) throw std::invalid_argument("FourierSignal: period must be positive");
    if (!c.empty()) c[0] = cplx(c[0].real(), 0.0);
  }

  std::size_t kmax() const { return c.empty() ? 0 : c.size() - 1; }
  double omega(std::size_t k) const { return 2.0 * std::numbers::pi * static_cast<double>(k) / period; }

  double operator()(double x) const {
    if (c.empty()) return 0.0;
    double v = c[0].real();
    for (std::size_t k = 1; k < c.size(); ++k) v += 2.0 * (c[k] * std::polar(1.0, omega(k) * x)).real();
    return v;
  }

  /// Sum of |c_k|^2 over k = -K..K.
  double power() const {
    if (c.empty()) return 0.0;
    double s = std::norm(c[0]);
    for (std::size_t k = 1; k < c.size(); ++k) s += 2.0 * std::norm(c[k]);
    return s;
  }
};

/// f(x - p).
inline FourierSignal shift(const FourierSignal& f, double p) {
  FourierSignal out = f;
  for (std::size_t k = 1; k < out.c.size(); ++k) out.c[k] *= std::polar(1.0, -f.omega(k) * p);
  return out;
}

/// Integral over one period of |f(x) - f(x + u)|^2.
inline double loss_alignment(const FourierSignal& f, double u) {
  double s = 0.0;
  for (std::size_t k = 1; k < f.c.size(); ++k)
    s += 2.0 * std::norm(f.c[k]) * (2.0 - 2.0 * std::cos(f.omega(k) * u));
  return f.period * s;
}

/// 4 pi k sin(2 pi k u), k a frequency in cycles per unit length.
inline double transfer_H(double u, double k) {
  return 4.0 * std::numbers::pi * k * std::sin(2.0 * std::numbers::pi * k * u);
}

/// H weighted by the squared spectrum of a unit-mass Gaussian of width sigma.
inline double transfer_H_tilde(double u, double k, double sigma) {
  const double a = 2.0 * std::numbers::pi * k * sigma;
  return std::exp(-a * a) * transfer_H(u, k);
}

/// d/du of loss_alignment.
inline double grad_alignment(const FourierSignal& f, double u) {
  double s = 0.0;
  for (std::size_t k = 1; k < f.c.size(); ++k)
    s += 2.0 * std::norm(f.c[k]) * transfer_H(u, static_cast<double>(k) / f.period);
  return s * f.period;
}

/// The same gradient written as a sum over H-tilde, i.e. the gradient of the
/// loss after Gaussian filtering of width sigma, without filtering f.
inline double grad_alignment_modulated(const FourierSignal& f, double u, double sigma) {
  double s = 0.0;
  for (std::size_t k = 1; k < f.c.size(); ++k)
    s += 2.0 * std::norm(f.c[k]) * transfer_H_tilde(u, static_cast<double>(k) / f.period, sigma);
  return s * f.period;
}

/// Second derivative of the loss at u = 0.
inline double alignment_curvature(const FourierSignal& f) {
  double s = 0.0;
  for (std::size_t k = 1; k < f.c.size(); ++k) s += 4.0 * std::norm(f.c[k]) * f.omega(k) * f.omega(k);
  return f.period * s;
}

/// Convolution with a unit-mass Gaussian of width sigma.
inline FourierSignal filter_signal(const FourierSignal& f, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("filter_signal: sigma must be non-negative");
  FourierSignal out = f;
  if (sigma == 0.0) return out;
  for (std::size_t k = 1; k < out.c.size(); ++k) {
    const double nu = static_cast<double>(k) / f.period;
    out.c[k] *= std::exp(-2.0 * std::numbers::pi * std::numbers::pi * sigma * sigma * nu * nu);
  }
  return out;
}

/// Two-view reconstruction objective
///   L(g, q1, q2) = sum_i int |g(x) - f(x - (p_i - q_i))|^2 dx.
inline double joint_loss(const FourierSignal& g, const FourierSignal& f, double p1, double p2,
                         double q1, double q2) {
  if (g.c.size() != f.c.size() || g.period != f.period)
    throw std::invalid_argument("joint_loss: spectra differ");
  double s = 0.0;
  for (double d : {p1 - q1, p2 - q2}) {
    const FourierSignal a = shift(f, d);
    s += std::norm(g.c[0] - a.c[0]);
    for (std::size_t k = 1; k < f.c.size(); ++k) s += 2.0 * std::norm(g.c[k] - a.c[k]);
  }
  return f.period * s;
}

/// Partial derivatives of joint_loss with respect to q1 and q2.
inline std::pair<double, double> joint_grad_q(const FourierSignal& g, const FourierSignal& f,
                                              double p1, double p2, double q1, double q2) {
  double out[2] = {0.0, 0.0};
  const double d[2] = {p1 - q1, p2 - q2};
  for (int i = 0; i < 2; ++i) {
    const FourierSignal a = shift(f, d[i]);
    for (std::size_t k = 1; k < f.c.size(); ++k) {
      // da/dq = i w a
      const cplx da = cplx(0.0, f.omega(k)) * a.c[k];
      out[i] += 2.0 * 2.0 * (std::conj(a.c[k] - g.c[k]) * da).real();
    }
    out[i] *= f.period;
  }
  return {out[0], out[1]};
}

/// Minimizer of joint_loss over g: the mean of the two registered views.
inline FourierSignal joint_g_optimum(const FourierSignal& f, double p1, double p2, double q1,
                                     double q2) {
  const FourierSignal a = shift(f, p1 - q1), b = shift(f, p2 - q2);
  FourierSignal g = a;
  for (std::size_t k = 0; k < g.c.size(); ++k) g.c[k] = 0.5 * (a.c[k] + b.c[k]);
  return g;
}

/// Dense midpoint-rule integral of |f(x) - f(x+u)|^2, used as a test oracle.
inline double loss_alignment_numeric(const FourierSignal& f, double u, std::size_t n) {
  const double h = f.period / static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = (static_cast<double>(i) + 0.5) * h;
    const double d = f(x) - f(x + u);
    s += d * d;
  }
  return s * h;
}

// ---------------------------------------------------------------------------
// Sign structure of the integrated gradient.

/// True when sign(dL/du) == sign(u) on a uniform grid over 0 < |u| <= umax.
inline bool gradient_sign_correct(const FourierSignal& f, double sigma, double umax,
                                  std::size_t samples = 2000) {
  const FourierSignal g = filter_signal(f, sigma);
  for (std::size_t i = 1; i <= samples; ++i) {
    const double u = umax * static_cast<double>(i) / static_cast<double>(samples);
    if (!(grad_alignment(g, u) > 0.0) || !(grad_alignment(g, -u) < 0.0)) return false;
  }
  return true;
}

/// Largest r on a grid of step du such that the gradient sign is correct on
/// all of 0 < |u| <= r.
inline double sign_correct_radius(const FourierSignal& f, double sigma, double umax, double du) {
  const FourierSignal g = filter_signal(f, sigma);
  double r = 0.0;
  for (double u = du; u <= umax + 1e-12; u += du) {
    if (!(grad_alignment(g, u) > 0.0) || !(grad_alignment(g, -u) < 0.0)) break;
    r = u;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Pilot experiment.

enum class PilotMode { kFiltered, kUnfiltered, kFullJoint };

inline std::string to_string(PilotMode m) {
  switch (m) {
    case PilotMode::kFiltered: return "filtered";
    case PilotMode::kUnfiltered: return "unfiltered";
    case PilotMode::kFullJoint: return "full-joint";
  }
  return "?";
}

inline PilotMode parse_pilot_mode(const std::string& s) {
  if (s == "filtered") return PilotMode::kFiltered;
  if (s == "unfiltered") return PilotMode::kUnfiltered;
  if (s == "full-joint") return PilotMode::kFullJoint;
  throw std::invalid_argument("unknown pilot mode '" + s + "'");
}

struct PilotConfig {
  double period = 64.0;
  std::vector<double> base_magnitudes{1.0, 0.6, 0.4};  // k = 1, 2, 3
  std::size_t noise_kmin = 4;
  std::size_t noise_kmax = 40;
  double noise_amplitude = 0.3;
  double u0 = 4.0;
  std::size_t trials = 20;
  std::size_t steps = 600;
  double lr = 0.5;  // in units of the inverse curvature at u = 0
  KernelSchedule schedule{4.0, 450, 100.0, false};
  PilotMode mode = PilotMode::kFiltered;
  bool joint_solve_g = true;  // full-joint: closed-form g, else relaxation step
  double joint_g_rate = 0.5;
  double success_tol = 0.01;
  std::uint64_t seed = 0;
};

/// Low-frequency base with fixed phases plus per-trial random high band.
inline FourierSignal make_pilot_signal(const PilotConfig& cfg, std::size_t trial) {
  std::vector<cplx> c(cfg.noise_kmax + 1, cplx(0.0, 0.0));
  Rng base = make_substream(0, "pilot-base");
  for (std::size_t k = 1; k <= cfg.base_magnitudes.size() && k < c.size(); ++k)
    c[k] = std::polar(cfg.base_magnitudes[k - 1], 2.0 * std::numbers::pi * uniform01(base));
  Rng noise = make_substream(cfg.seed, "noise", trial);
  for (std::size_t k = cfg.noise_kmin; k <= cfg.noise_kmax; ++k) {
    const double mag = cfg.noise_amplitude * uniform01(noise);
    c[k] = std::polar(mag, 2.0 * std::numbers::pi * uniform01(noise));
  }
  return FourierSignal(cfg.period, std::move(c));
}

struct PilotTrial {
  std::size_t trial = 0;
  std::vector<double> u;     // u before each step, then the final value
  std::vector<double> loss;  // matching alignment loss of the unfiltered signal
  bool diverged = false;
  double final_u() const { return u.back(); }
};

struct PilotResult {
  PilotConfig config;
  std::vector<PilotTrial> trials;

  std::size_t count_within(double tol) const {
    std::size_t n = 0;
    for (const auto& t : trials) n += (!t.diverged && std::abs(t.final_u()) < tol) ? 1 : 0;
    return n;
  }
  double success_rate(double tol) const {
    return trials.empty() ? 0.0 : static_cast<double>(count_within(tol)) / static_cast<double>(trials.size());
  }
};

inline PilotTrial run_pilot_trial(const PilotConfig& cfg, std::size_t trial) {
  const FourierSignal f = make_pilot_signal(cfg, trial);
  const double p1 = cfg.u0, p2 = 0.0;
  double q1 = 0.0, q2 = 0.0;
  PilotTrial out;
  out.trial = trial;
  FourierSignal g;
  bool g_init = false;
  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    const double u = (p1 - p2) - (q1 - q2);
    out.u.push_back(u);
    out.loss.push_back(loss_alignment(f, u));
    if (!std::isfinite(u)) {
      out.diverged = true;
      break;
    }
    if (step == cfg.steps) break;
    const double sigma = cfg.mode == PilotMode::kUnfiltered
                             ? 0.0
                             : schedule_sigma(cfg.schedule, static_cast<long>(step));
    const FourierSignal fs = filter_signal(f, sigma);
    const double curvature = alignment_curvature(fs);
    const double eta = curvature > 0.0 ? cfg.lr / curvature : 0.0;
    if (cfg.mode != PilotMode::kFullJoint) {
      // descend directly on u through q1
      q1 += eta * grad_alignment(fs, u);
    } else {
      if (cfg.joint_solve_g || !g_init) {
        g = joint_g_optimum(fs, p1, p2, q1, q2);
        g_init = true;
      } else {
        const FourierSignal target = joint_g_optimum(fs, p1, p2, q1, q2);
        for (std::size_t k = 0; k < g.c.size(); ++k)
          g.c[k] += cfg.joint_g_rate * (target.c[k] - g.c[k]);
      }
      const auto [d1, d2] = joint_grad_q(g, fs, p1, p2, q1, q2);
      q1 -= eta * d1;
      q2 -= eta * d2;
    }
  }
  return out;
}

inline PilotResult run_pilot(const PilotConfig& cfg) {
  PilotResult res;
  res.config = cfg;
  res.trials.resize(cfg.trials);
  parallel_chunks(cfg.trials, [&](std::size_t t) { res.trials[t] = run_pilot_trial(cfg, t); });
  return res;
}

inline CsvTable pilot_trajectories_csv(const PilotResult& r) {
  CsvTable tab({"trial", "step", "u", "loss"});
  for (const auto& t : r.trials)
    for (std::size_t s = 0; s < t.u.size(); ++s)
      tab.add({static_cast<long long>(t.trial), static_cast<long long>(s), t.u[s], t.loss[s]});
  return tab;
}

/// (u, k, H, H-tilde) on a grid, k in cycles per unit length.
inline CsvTable transfer_grid_csv(double umax, double du, std::size_t kmax, double period,
                                  double sigma) {
  CsvTable tab({"u", "k", "H", "H_tilde"});
  const auto n = static_cast<long>(std::llround(umax / du));
  for (long i = -n; i <= n; ++i) {
    const double u = du * static_cast<double>(i);
    for (std::size_t k = 1; k <= kmax; ++k) {
      const double nu = static_cast<double>(k) / period;
      tab.add({u, nu, transfer_H(u, nu), transfer_H_tilde(u, nu, sigma)});
    }
  }
  return tab;
}

}  // namespace tensorpose
