// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

// The tensorpose command-line tool. Exit codes: 0 success, 1 runtime
// failure, 2 bad arguments or configuration.

#pragma once

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tensorpose/checkpoint.hpp"
#include "tensorpose/config.hpp"
#include "tensorpose/diagnostics.hpp"

#ifndef TENSORPOSE_VERSION
#define TENSORPOSE_VERSION "0.0.0"
#endif

namespace tensorpose::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Shared by every subcommand: where outputs go and what the manifest records.
struct RunContext {
  std::string command;
  std::string out_dir;
  bool deterministic = false;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json results = nlohmann::json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  std::string path(const std::string& name) const { return (std::filesystem::path(out_dir) / name).string(); }

  void prepare() const {
    if (out_dir.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + out_dir + ": " + ec.message());
  }

  void write_manifest() const {
    if (out_dir.empty()) return;
    nlohmann::json m;
    m["command"] = command;
    m["version"] = TENSORPOSE_VERSION;
    m["seed"] = seed;
    m["deterministic"] = deterministic;
    m["config"] = config;
    m["results"] = results;
    m["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream os(path("manifest.json"));
    if (!os) throw std::runtime_error("cannot write " + path("manifest.json"));
    os << m.dump(2) << '\n';
  }
};

/// Loads an optional config file into the bound fields and records the
/// effective values.
inline void load_config(const std::string& path, const ConfigBinder& b, RunContext& ctx) {
  if (!path.empty()) b.apply(load_config_file(path));
  ctx.config = b.echo();
}

inline std::string fmt(double v) { return format_real(v); }

// ---------------------------------------------------------------------------
// Subcommands.

inline int run_verify_conv(RunContext& ctx, std::size_t cases, std::ostream& out) {
  ctx.config = {{"cases", cases}, {"seed", ctx.seed}};
  const auto rows = verify_conv_cases(cases, ctx.seed);
  constexpr double kTol = 1e-10;
  CsvTable tab({"case", "I", "J", "K", "rank", "sigma", "kernel_length", "max_abs_diff"});
  double worst = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ConvCase& c = rows[i];
    worst = std::max(worst, c.max_abs_diff);
    tab.add({static_cast<long long>(i), static_cast<long long>(c.dims[0]), static_cast<long long>(c.dims[1]),
             static_cast<long long>(c.dims[2]), static_cast<long long>(c.rank), c.sigma,
             static_cast<long long>(c.length), c.max_abs_diff});
    out << "case " << i << "  dims " << c.dims[0] << "x" << c.dims[1] << "x" << c.dims[2] << "  R=" << c.rank
        << "  sigma=" << fmt(c.sigma) << "  L=" << c.length << "  max|diff|=" << fmt(c.max_abs_diff) << '\n';
  }
  const bool pass = worst <= kTol;
  out << (pass ? "PASS" : "FAIL") << "  worst max|diff| " << fmt(worst) << " (tolerance " << fmt(kTol) << ")\n";
  ctx.results = {{"worst_max_abs_diff", worst}, {"pass", pass}};
  if (!ctx.out_dir.empty()) tab.write(ctx.path("metrics.csv"));
  return pass ? kExitOk : kExitFailure;
}

inline Dims3 parse_dims(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t pos = 0;
    long long x = 0;
    try {
      x = std::stoll(part, &pos);
    } catch (const std::exception&) {
      throw ConfigError("bad --dims '" + s + "'");
    }
    if (pos != part.size() || x <= 0) throw ConfigError("bad --dims '" + s + "'");
    v.push_back(static_cast<std::size_t>(x));
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw ConfigError("--dims takes N or I,J,K");
}

inline int run_bench_conv(RunContext& ctx, const std::string& dims_arg, std::size_t rank, std::size_t klen,
                          std::size_t reps, const std::string& report, std::ostream& out) {
  const Dims3 d = parse_dims(dims_arg);
  if (rank == 0 || klen == 0 || klen % 2 == 0) throw ConfigError("--rank must be positive and --klen odd");
  ctx.config = {{"dims", d}, {"rank", rank}, {"klen", klen}, {"reps", reps}, {"seed", ctx.seed}};
  const BenchReport r = bench_compare(d, rank, klen, reps, ctx.seed);
  out << "dims " << d[0] << "x" << d[1] << "x" << d[2] << "  R=" << rank << "  L=" << klen << "  reps=" << reps << '\n'
      << "component-wise  " << fmt(r.componentwise_seconds) << " s   ops R(IJL+JKL+KIL) = " << fmt(r.ops_componentwise)
      << '\n'
      << "brute force     " << fmt(r.bruteforce_seconds) << " s   ops IJKL^3 = " << fmt(r.ops_bruteforce) << '\n'
      << "speedup " << fmt(r.speedup()) << "x  (op ratio " << fmt(r.ops_bruteforce / r.ops_componentwise) << "x)\n";
  ctx.results = {{"speedup", r.speedup()},
                 {"componentwise_s", r.componentwise_seconds},
                 {"bruteforce_s", r.bruteforce_seconds},
                 {"ops_componentwise", r.ops_componentwise},
                 {"ops_bruteforce", r.ops_bruteforce}};
  if (!report.empty()) {
    std::ofstream os(report);
    if (!os) throw std::runtime_error("cannot write " + report);
    os << BenchReport::csv_header() << '\n' << r.csv_row() << '\n';
  }
  return kExitOk;
}

inline int run_pilot1d(RunContext& ctx, const std::string& config_path, std::ostream& out) {
  PilotSettings s;
  ConfigBinder b;
  bind_pilot(b, s);
  load_config(config_path, b, ctx);
  try {
    s.pilot.mode = parse_pilot_mode(s.mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  ctx.seed = s.pilot.seed;
  const PilotResult r = run_pilot(s.pilot);
  const double sigma0 = s.pilot.schedule.sigma0;
  CsvTable metrics({"trial", "final_u", "converged", "sign_correct"});
  std::size_t sign_ok = 0;
  for (const PilotTrial& t : r.trials) {
    const bool ok = gradient_sign_correct(make_pilot_signal(s.pilot, t.trial), sigma0, 6.0);
    sign_ok += ok ? 1 : 0;
    metrics.add({static_cast<long long>(t.trial), t.final_u(),
                 static_cast<long long>(!t.diverged && std::abs(t.final_u()) < s.pilot.success_tol),
                 static_cast<long long>(ok)});
  }
  const double rate = r.success_rate(s.pilot.success_tol);
  out << "mode " << to_string(s.pilot.mode) << "  trials " << r.trials.size() << "  |u| < "
      << fmt(s.pilot.success_tol) << " in " << fmt(100.0 * rate) << "% of trials\n"
      << "gradient sign correct for |u| <= 6 at sigma " << fmt(sigma0) << ": " << sign_ok << "/" << r.trials.size()
      << " trials\n";
  ctx.results = {{"success_rate", rate}, {"sign_correct_trials", sign_ok}};
  if (!ctx.out_dir.empty()) {
    metrics.write(ctx.path("metrics.csv"));
    pilot_trajectories_csv(r).write(ctx.path("trajectories.csv"));
    transfer_grid_csv(s.transfer_umax, s.transfer_du, s.transfer_kmax, s.pilot.period, sigma0)
        .write(ctx.path("transfer_grid.csv"));
  }
  return kExitOk;
}

inline int run_align2d(RunContext& ctx, const std::string& config_path, const std::string& image_path,
                       std::ostream& out) {
  PlanarSettings s;
  ConfigBinder b;
  bind_planar(b, s);
  load_config(config_path, b, ctx);
  const PlanarConfig cfg = finalize(s);
  ctx.seed = cfg.seed;
  Image image;
  if (!image_path.empty()) {
    if (!std::filesystem::exists(image_path)) throw ConfigError("image not found: " + image_path);
    image = read_png(image_path);
    ctx.config["image"] = image_path;
  }
  const std::string dump = ctx.out_dir.empty() ? "" : ctx.path("diverged_field.ckpt");
  const PlanarRun run = train_planar(cfg, image_path.empty() ? nullptr : &image, [&](const PlanarRun& r) {
    if (!dump.empty()) save_checkpoint(dump, r.state.field);
  });
  out << "warp error " << fmt(run.initial.warp_error) << " -> " << fmt(run.final.warp_error) << "   patch PSNR "
      << fmt(run.final.psnr) << " dB\n";
  ctx.results = {{"initial_warp_error", run.initial.warp_error},
                 {"final_warp_error", run.final.warp_error},
                 {"final_psnr", run.final.psnr}};
  if (!ctx.out_dir.empty()) {
    run.metrics.write(ctx.path("metrics.csv"));
    write_png(ctx.path("recovered_content.png"), reconstruct_dense(run.state.field));
    write_png(ctx.path("warp_overlay.png"), draw_warp_overlay(run.problem, run.state.warps));
    save_checkpoint(ctx.path("field.ckpt"), run.state.field);
    std::vector<std::vector<double>> rows;
    for (const auto& w : run.state.warps) rows.emplace_back(w.begin(), w.end());
    write_tangents(ctx.path("warps.txt"), rows);
  }
  return kExitOk;
}

inline void save_joint_checkpoint(const RunContext& ctx, const Joint3DState& s, const std::string& tag) {
  save_checkpoint(ctx.path("density" + tag + ".ckpt"), s.density);
  save_checkpoint(ctx.path("appearance" + tag + ".ckpt"), s.appearance);
  write_tangents(ctx.path("decoder" + tag + ".txt"), {s.decoder.params});
  std::vector<std::vector<double>> rows;
  for (const auto& d : s.delta) rows.emplace_back(d.begin(), d.end());
  write_tangents(ctx.path("pose_delta" + tag + ".txt"), rows);
}

inline int run_toy3d(RunContext& ctx, const std::string& config_path, std::ostream& out) {
  JointSettings s;
  ConfigBinder b;
  bind_joint(b, s);
  load_config(config_path, b, ctx);
  const Joint3DConfig cfg = finalize(s);
  ctx.seed = cfg.seed;
  const bool files = !ctx.out_dir.empty();
  const JointRun run = train_joint(cfg, [&](const JointRun& r, long step) {
    if (files && s.checkpoint_every > 0 && step > 0 && step % s.checkpoint_every == 0)
      save_joint_checkpoint(ctx, r.state, "_" + std::to_string(step));
  });
  out << "rotation error " << fmt(run.initial.rot_err_deg) << " -> " << fmt(run.final.rot_err_deg)
      << " deg   translation error " << fmt(run.initial.trans_err) << " -> " << fmt(run.final.trans_err)
      << "   training PSNR " << fmt(run.final.psnr) << " dB\n";
  PoseRefineOptions ro;
  ro.steps = static_cast<long>(s.refine_steps);
  ro.lr.total = ro.steps;
  ro.seed = cfg.seed;
  const auto views = evaluate_test_views(run, cfg, s.test_views, ro);
  CsvTable test({"view", "psnr_raw", "psnr_refined", "ssim_refined"});
  double mean_raw = 0.0, mean_ref = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    test.add({static_cast<long long>(v), views[v].psnr_raw, views[v].psnr_refined, views[v].ssim_refined});
    mean_raw += views[v].psnr_raw / static_cast<double>(views.size());
    mean_ref += views[v].psnr_refined / static_cast<double>(views.size());
  }
  if (!views.empty())
    out << "held-out PSNR " << fmt(mean_raw) << " dB raw, " << fmt(mean_ref) << " dB after pose refinement\n";
  ctx.results = {{"initial_rot_err_deg", run.initial.rot_err_deg},
                 {"final_rot_err_deg", run.final.rot_err_deg},
                 {"final_trans_err", run.final.trans_err},
                 {"final_train_psnr", run.final.psnr},
                 {"test_psnr_raw", mean_raw},
                 {"test_psnr_refined", mean_ref}};
  if (files) {
    run.metrics.write(ctx.path("metrics.csv"));
    test.write(ctx.path("test_metrics.csv"));
    for (std::size_t v = 0; v < views.size(); ++v) {
      write_png(ctx.path("test_view_" + std::to_string(v) + ".png"), views[v].refined);
      write_png(ctx.path("test_view_" + std::to_string(v) + "_gt.png"), views[v].gt);
    }
    save_joint_checkpoint(ctx, run.state, "");
  }
  return kExitOk;
}

inline int run_gradcheck(RunContext& ctx, std::ostream& out) {
  constexpr double kTol = 1e-4;
  ctx.config = {{"seed", ctx.seed}};
  std::vector<GradcheckEntry> all = gradcheck_joint3d(ctx.seed);
  for (auto& e : gradcheck_align2d(ctx.seed)) all.push_back(std::move(e));
  CsvTable tab({"group", "checked", "max_rel_error"});
  bool pass = true;
  for (const auto& e : all) {
    const bool ok = e.report.max_rel_error <= kTol;
    pass = pass && ok;
    tab.add({e.name, static_cast<long long>(e.report.checked), e.report.max_rel_error});
    out << (ok ? "ok    " : "FAIL  ") << e.name << "  coords " << e.report.checked << "  max rel error "
        << fmt(e.report.max_rel_error) << '\n';
    ctx.results[e.name] = e.report.max_rel_error;
  }
  out << (pass ? "PASS" : "FAIL") << " (tolerance " << fmt(kTol) << ")\n";
  if (!ctx.out_dir.empty()) tab.write(ctx.path("metrics.csv"));
  return pass ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

/// Parses argv and runs one subcommand.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"tensorpose: filtered factorized fields with joint pose optimisation"};
  app.set_version_flag("--version", std::string(TENSORPOSE_VERSION));
  app.require_subcommand(1);

  RunContext ctx;
  std::string config_path, image_path, dims = "32", report;
  std::size_t cases = 20, rank = 4, klen = 9, reps = 3;

  auto common = [&](CLI::App* sub, bool with_config) {
    sub->add_option("--out", ctx.out_dir, "output directory");
    sub->add_flag("--deterministic", ctx.deterministic, "fixed-order reductions (always on; recorded)");
    if (with_config) sub->add_option("--config", config_path, "flat JSON config")->check(CLI::ExistingFile);
  };
  CLI::App* verify = app.add_subcommand("verify-conv", "component-wise filter vs brute-force oracle");
  common(verify, false);
  verify->add_option("--cases", cases, "random cases")->check(CLI::PositiveNumber);
  verify->add_option("--seed", ctx.seed, "root seed");

  CLI::App* bench = app.add_subcommand("bench-conv", "time component-wise vs brute-force filtering");
  bench->add_option("--dims", dims, "N or I,J,K");
  bench->add_option("--rank", rank, "VM rank");
  bench->add_option("--klen", klen, "kernel length (odd)");
  bench->add_option("--reps", reps, "repetitions per arm")->check(CLI::PositiveNumber);
  bench->add_option("--out", report, "report CSV path");
  bench->add_option("--seed", ctx.seed, "root seed");
  bench->add_flag("--deterministic", ctx.deterministic, "recorded only");

  CLI::App* pilot = app.add_subcommand("pilot1d", "1D shift-recovery pilot");
  common(pilot, true);
  CLI::App* align = app.add_subcommand("align2d", "planar joint alignment");
  common(align, true);
  align->add_option("--image", image_path, "input PNG (default: procedural texture)");
  CLI::App* toy = app.add_subcommand("toy3d", "joint field and pose optimisation on the toy scene");
  common(toy, true);
  CLI::App* grad = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  common(grad, false);
  grad->add_option("--seed", ctx.seed, "root seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (bench->parsed()) {
      ctx.command = "bench-conv";
      if (!report.empty()) {
        const auto parent = std::filesystem::path(report).parent_path();
        ctx.out_dir = parent.empty() ? "." : parent.string();
      }
    } else {
      ctx.command = app.get_subcommands().front()->get_name();
    }
    ctx.prepare();
    int code = kExitOk;
    if (verify->parsed()) code = run_verify_conv(ctx, cases, out);
    if (bench->parsed()) code = run_bench_conv(ctx, dims, rank, klen, reps, report, out);
    if (pilot->parsed()) code = run_pilot1d(ctx, config_path, out);
    if (align->parsed()) code = run_align2d(ctx, config_path, image_path, out);
    if (toy->parsed()) code = run_toy3d(ctx, config_path, out);
    if (grad->parsed()) code = run_gradcheck(ctx, out);
    ctx.results["exit_code"] = code;
    ctx.write_manifest();
    return code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace tensorpose::cli
