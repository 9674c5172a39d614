// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "tensorpose/spectral1d.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace tensorpose {
namespace {

constexpr double kPi = std::numbers::pi;

FourierSignal random_signal(Rng& rng, std::size_t K, double T) {
  std::vector<cplx> c(K + 1);
  c[0] = normal01(rng);
  for (std::size_t k = 1; k <= K; ++k) c[k] = cplx(normal01(rng), normal01(rng)) / static_cast<double>(k);
  return FourierSignal(T, c);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

TEST(FourierSignal, EvaluatesReal) {
  Rng rng = make_substream(1, "t");
  const auto f = random_signal(rng, 6, 10.0);
  // direct two-sided sum including negative k
  for (double x : {0.0, 0.37, 4.2, -3.3}) {
    cplx s = f.c[0];
    for (std::size_t k = 1; k <= 6; ++k) {
      const double w = 2 * kPi * static_cast<double>(k) * x / 10.0;
      s += f.c[k] * std::exp(cplx(0, w)) + std::conj(f.c[k]) * std::exp(cplx(0, -w));
    }
    EXPECT_LE(std::abs(s.imag()), 1e-12);
    EXPECT_NEAR(f(x), s.real(), 1e-12);
  }
  EXPECT_THROW(FourierSignal(0.0, {}), std::invalid_argument);
}

TEST(Shift, IdentityPeriodicAndInverse) {
  Rng rng = make_substream(2, "t");
  const auto f = random_signal(rng, 8, 7.0);
  EXPECT_EQ(shift(f, 0.0).c, f.c);
  const auto p = shift(f, 7.0);
  for (std::size_t k = 0; k < f.c.size(); ++k) EXPECT_NEAR(std::abs(p.c[k] - f.c[k]), 0.0, 1e-13);
  const auto back = shift(shift(f, 1.234), -1.234);
  for (std::size_t k = 0; k < f.c.size(); ++k) EXPECT_NEAR(std::abs(back.c[k] - f.c[k]), 0.0, 1e-14);
  for (double x : {0.1, 2.5}) EXPECT_NEAR(shift(f, 0.8)(x), f(x - 0.8), 1e-12);
}

TEST(Parseval, EnergyMatchesDenseIntegral) {
  Rng rng = make_substream(3, "t");
  const auto f = random_signal(rng, 10, 5.0);
  const double h = 5.0 / 10000;
  double integral = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double v = f((i + 0.5) * h);
    integral += v * v * h;
  }
  EXPECT_LE(rel_err(f.period * f.power(), integral), 1e-8);
}

TEST(LossAlignment, ZeroSymmetricAndMatchesIntegral) {
  const FourierSignal cosine(8.0, {0.0, 0.5});  // f = cos(2 pi x / 8)
  EXPECT_EQ(loss_alignment(cosine, 0.0), 0.0);
  // |cos a - cos(a + pi)|^2 = 4 cos^2 a, integral over a period = 2T
  EXPECT_NEAR(loss_alignment(cosine, 4.0), 16.0, 1e-12);
  EXPECT_LE(rel_err(loss_alignment(cosine, 4.0), loss_alignment_numeric(cosine, 4.0, 10000)), 1e-8);

  Rng rng = make_substream(4, "t");
  for (int i = 0; i < 10; ++i) {
    const auto f = random_signal(rng, 12, 9.0);
    const double u = 9.0 * uniform01(rng) - 4.5;
    EXPECT_DOUBLE_EQ(loss_alignment(f, u), loss_alignment(f, -u));
    EXPECT_LE(rel_err(loss_alignment(f, u), loss_alignment_numeric(f, u, 10000)), 1e-8);
  }
}

TEST(Transfer, ClosedFormValues) {
  EXPECT_NEAR(transfer_H(0.25, 1.0), 4 * kPi, 1e-12);
  EXPECT_NEAR(transfer_H(0.25, 1.0), 12.566370614359172, 1e-12);
  EXPECT_EQ(transfer_H(0.0, 3.0), 0.0);
  for (double u : {-1.3, 0.2, 2.7})
    for (double k : {0.1, 1.0, 3.5}) EXPECT_EQ(transfer_H_tilde(u, k, 0.0), transfer_H(u, k));
  EXPECT_NEAR(transfer_H_tilde(0.25, 1.0, 0.1), std::exp(-std::pow(0.2 * kPi, 2)) * 4 * kPi, 1e-12);
}

TEST(GradAlignment, MatchesFiniteDifferences) {
  Rng rng = make_substream(5, "t");
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto f = random_signal(rng, 1 + rng() % 30, 4.0 + 60.0 * uniform01(rng));
    const double u = (uniform01(rng) - 0.5) * f.period;
    const double h = 1e-6;
    const double fd = (loss_alignment(f, u + h) - loss_alignment(f, u - h)) / (2 * h);
    worst = std::max(worst, rel_err(grad_alignment(f, u), fd));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(GradAlignment, ZeroAtOriginPositiveForSmallShift) {
  const FourierSignal f(16.0, {0.3, cplx(0.2, -0.4)});
  EXPECT_EQ(grad_alignment(f, 0.0), 0.0);
  EXPECT_GT(grad_alignment(f, 0.1), 0.0);
  EXPECT_LT(grad_alignment(f, -0.1), 0.0);
}

TEST(FilterSignal, IdentityDampingAndModulation) {
  Rng rng = make_substream(6, "t");
  const auto f = random_signal(rng, 20, 32.0);
  EXPECT_EQ(filter_signal(f, 0.0).c, f.c);
  EXPECT_THROW(filter_signal(f, -1.0), std::invalid_argument);
  const auto g = filter_signal(f, 1.7);
  for (std::size_t k = 0; k < f.c.size(); ++k) EXPECT_LE(std::norm(g.c[k]), std::norm(f.c[k]));
  for (double u : {-9.0, -0.3, 0.7, 5.5, 13.0})
    for (double s : {0.3, 1.7, 4.0}) {
      const double a = grad_alignment(filter_signal(f, s), u);
      const double b = grad_alignment_modulated(f, u, s);
      EXPECT_LE(std::abs(a - b), 1e-10 * std::max(1.0, std::abs(a)));
    }
}

TEST(JointOptimum, ExactReductionAndMinimality) {
  Rng rng = make_substream(7, "t");
  const auto f = random_signal(rng, 9, 12.0);
  const double p1 = 1.3, p2 = -0.4;
  const auto same = joint_g_optimum(f, p1, p2, p1, p2);
  for (std::size_t k = 0; k < f.c.size(); ++k) EXPECT_NEAR(std::abs(same.c[k] - f.c[k]), 0.0, 1e-15);

  const double q1 = 0.2, q2 = 0.5;
  const double u = (p1 - p2) - (q1 - q2);
  const auto g = joint_g_optimum(f, p1, p2, q1, q2);
  const double lg = joint_loss(g, f, p1, p2, q1, q2);
  EXPECT_LE(rel_err(lg, 0.5 * loss_alignment(f, u)), 1e-12);
  for (int i = 0; i < 50; ++i) {
    FourierSignal h = g;
    for (auto& c : h.c) c += 0.01 * cplx(normal01(rng), normal01(rng));
    EXPECT_GE(joint_loss(h, f, p1, p2, q1, q2), lg);
  }
}

TEST(JointOptimum, QGradientMatchesFiniteDifferences) {
  Rng rng = make_substream(8, "t");
  const auto f = random_signal(rng, 7, 10.0);
  auto g = random_signal(rng, 7, 10.0);
  const double p1 = 2.0, p2 = 0.5, q1 = 0.3, q2 = -0.2, h = 1e-6;
  const auto [d1, d2] = joint_grad_q(g, f, p1, p2, q1, q2);
  const double fd1 = (joint_loss(g, f, p1, p2, q1 + h, q2) - joint_loss(g, f, p1, p2, q1 - h, q2)) / (2 * h);
  const double fd2 = (joint_loss(g, f, p1, p2, q1, q2 + h) - joint_loss(g, f, p1, p2, q1, q2 - h)) / (2 * h);
  EXPECT_LE(rel_err(d1, fd1), 1e-6);
  EXPECT_LE(rel_err(d2, fd2), 1e-6);
}

TEST(SignStructure, WideningWithSigma) {
  PilotConfig cfg;
  for (std::size_t t = 0; t < 5; ++t) {
    const auto f = make_pilot_signal(cfg, t);
    double prev = 0.0;
    for (double s : {0.0, 0.25, 0.5, 1.0, 2.0, 3.0, 4.0}) {
      const double r = sign_correct_radius(f, s, 20.0, 0.01);
      EXPECT_GE(r, prev) << "trial " << t << " sigma " << s;
      prev = r;
    }
    EXPECT_TRUE(gradient_sign_correct(f, 4.0, 6.0));
    EXPECT_FALSE(gradient_sign_correct(f, 0.0, 6.0));
  }
}

TEST(Pilot, SmoothSignalConvergesInEveryMode) {
  PilotConfig cfg;
  cfg.noise_amplitude = 0.0;
  cfg.trials = 3;
  for (auto m : {PilotMode::kFiltered, PilotMode::kUnfiltered, PilotMode::kFullJoint}) {
    cfg.mode = m;
    const auto r = run_pilot(cfg);
    for (const auto& t : r.trials) EXPECT_LT(std::abs(t.final_u()), 1e-3) << to_string(m);
  }
}

TEST(Pilot, FullJointWithSolvedGTracksReducedDescent) {
  PilotConfig cfg;
  cfg.trials = 2;
  cfg.steps = 100;
  cfg.mode = PilotMode::kFiltered;
  const auto a = run_pilot(cfg);
  cfg.mode = PilotMode::kFullJoint;
  const auto b = run_pilot(cfg);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t s = 0; s < a.trials[t].u.size(); ++s)
      EXPECT_NEAR(a.trials[t].u[s], b.trials[t].u[s], 1e-9);
}

TEST(Pilot, RelaxedGStillConverges) {
  PilotConfig cfg;
  cfg.trials = 4;
  cfg.mode = PilotMode::kFullJoint;
  cfg.joint_solve_g = false;
  EXPECT_EQ(run_pilot(cfg).count_within(0.01), 4u);
}

TEST(Pilot, DeterministicAndOrderIndependent) {
  PilotConfig cfg;
  cfg.trials = 4;
  const auto a = pilot_trajectories_csv(run_pilot(cfg)).str();
  EXPECT_EQ(a, pilot_trajectories_csv(run_pilot(cfg)).str());
  const auto solo = run_pilot_trial(cfg, 3);
  EXPECT_EQ(solo.u, run_pilot(cfg).trials[3].u);
}

TEST(Pilot, ParsesModes) {
  EXPECT_EQ(parse_pilot_mode("full-joint"), PilotMode::kFullJoint);
  EXPECT_EQ(to_string(parse_pilot_mode("unfiltered")), "unfiltered");
  EXPECT_THROW(parse_pilot_mode("fast"), std::invalid_argument);
}

TEST(TransferGrid, ShapeAndValues) {
  const auto tab = transfer_grid_csv(2.0, 0.5, 3, 8.0, 1.0);
  EXPECT_EQ(tab.size(), 9u * 3u);
  EXPECT_EQ(tab.str().substr(0, 14), "u,k,H,H_tilde\n");
}

}  // namespace
}  // namespace tensorpose
