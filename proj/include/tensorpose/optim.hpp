// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorpose/log.hpp"
#include "tensorpose/random.hpp"
#include "tensorpose/tensorfield.hpp"

namespace tensorpose {

/// lr0 * gamma^(step / total) after a linear warm-up over the first
/// `warmup` steps.
struct LrSchedule {
  double lr0 = 1e-3;
  double gamma = 1.0;
  long total = 1;
  long warmup = 0;
};

inline double lr_at(const LrSchedule& s, long step) {
  if (s.lr0 < 0.0) throw std::invalid_argument("learning rate must be non-negative");
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  const double decay = std::pow(s.gamma, static_cast<double>(step) / static_cast<double>(std::max(1L, s.total)));
  const double ramp = s.warmup > 0 && step < s.warmup ? static_cast<double>(step) / static_cast<double>(s.warmup) : 1.0;
  return s.lr0 * decay * ramp;
}

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void reset() {
    m.clear();
    v.clear();
    step = 0;
  }
};

/// A named set of parameter blocks sharing a schedule and optimizer state.
struct ParamGroup {
  std::string name;
  std::vector<std::span<double>> params;
  LrSchedule schedule;
  AdamState state;
  std::size_t skipped = 0;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
  }
};

/// Bias-corrected Adam. grads are flat, in block order. weights, if given,
/// scale each element's step. A non-finite gradient skips the whole group.
/// Returns false when skipped.
inline bool adam_step(ParamGroup& g, std::span<const double> grads, long global_step,
                      std::span<const double> weights = {}) {
  const std::size_t n = g.size();
  if (grads.size() != n) throw std::invalid_argument("adam_step: gradient size mismatch for " + g.name);
  if (!weights.empty() && weights.size() != n) throw std::invalid_argument("adam_step: weight size mismatch");
  for (double x : grads)
    if (!std::isfinite(x)) {
      ++g.skipped;
      log_warning("non-finite gradient in group '" + g.name + "'; step skipped");
      return false;
    }
  AdamState& s = g.state;
  if (s.m.size() != n) {
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.step = 0;
  }
  ++s.step;
  const double lr = lr_at(g.schedule, global_step);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  std::size_t k = 0;
  for (auto& block : g.params)
    for (double& p : block) {
      s.m[k] = s.beta1 * s.m[k] + (1.0 - s.beta1) * grads[k];
      s.v[k] = s.beta2 * s.v[k] + (1.0 - s.beta2) * grads[k] * grads[k];
      const double mh = s.m[k] / c1, vh = s.v[k] / c2;
      const double w = weights.empty() ? 1.0 : weights[k];
      p -= w * lr * mh / (std::sqrt(vh) + s.eps);
      ++k;
    }
  return true;
}

// ---------------------------------------------------------------------------
// Flat views of tensor parameters.

inline std::vector<std::span<double>> param_blocks(VMTensor3D& t) {
  std::vector<std::span<double>> b;
  for (auto& v : t.vec) b.emplace_back(v);
  for (auto& m : t.mat) b.emplace_back(m);
  return b;
}

inline std::vector<std::span<double>> param_blocks(FeatureTensor3D& t) {
  auto b = param_blocks(t.comps);
  for (auto& x : t.basis) b.emplace_back(x);
  return b;
}

inline std::vector<std::span<double>> param_blocks(Tensor2DFactorized& t) { return {t.vx, t.vy}; }

template <class T>
std::vector<double> flatten(const T& t) {
  std::vector<double> out;
  for (const auto& b : param_blocks(const_cast<T&>(t))) out.insert(out.end(), b.begin(), b.end());
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double h = 1e-6;
  double abs_floor = 1e-6;  // denominator floor for near-zero gradients
  std::size_t max_coords = 0;  // 0 = every coordinate
  std::uint64_t seed = 0;
};

/// Central differences of loss() over coordinates of params (flat, block
/// order) against analytic. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckReport grad_check(const std::function<double()>& loss,
                                  const std::vector<std::span<double>>& params,
                                  std::span<const double> analytic,
                                  const GradCheckOptions& opt = {}) {
  std::vector<double*> coords;
  for (const auto& b : params)
    for (double& x : b) coords.push_back(&x);
  if (analytic.size() != coords.size()) throw std::invalid_argument("grad_check: size mismatch");
  std::vector<std::size_t> idx(coords.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (opt.max_coords > 0 && opt.max_coords < idx.size()) {
    Rng rng = make_substream(opt.seed, "gradcheck");
    for (std::size_t i = 0; i < opt.max_coords; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(opt.max_coords);
  }
  GradCheckReport rep;
  for (std::size_t i : idx) {
    double* x = coords[i];
    const double x0 = *x;
    *x = x0 + opt.h;
    const double lp = loss();
    *x = x0 - opt.h;
    const double lm = loss();
    *x = x0;
    const double num = (lp - lm) / (2.0 * opt.h);
    const double a = analytic[i];
    const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), opt.abs_floor});
    ++rep.checked;
    if (err > rep.max_rel_error || !std::isfinite(err)) {
      rep.max_rel_error = std::isfinite(err) ? err : INFINITY;
      rep.worst_index = i;
      rep.worst_analytic = a;
      rep.worst_numeric = num;
    }
  }
  return rep;
}

}  // namespace tensorpose
