// Copyright 2026 The tensorpose Authors
// SPDX-License-Identifier: Apache-2.0

// Flat dotted-key JSON configs. Every experiment binds its keys to struct
// fields; keys nobody bound are rejected.

#pragma once

#include <cstdint>
#include <functional>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "tensorpose/align2d.hpp"
#include "tensorpose/joint3d.hpp"
#include "tensorpose/spectral1d.hpp"

namespace tensorpose {

/// Bad or unreadable configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigBinder {
 public:
  template <class T>
  void bind(const std::string& key, T& field) {
    Entry e{[key, &field](const nlohmann::json& v) { field = convert<T>(key, v); },
            [&field] { return nlohmann::json(field); }};
    if (!entries_.emplace(key, std::move(e)).second) throw std::logic_error("duplicate config key " + key);
  }

  /// Copies values from a flat JSON object into the bound fields.
  void apply(const nlohmann::json& j) const {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    std::vector<std::string> unknown;
    for (const auto& [key, value] : j.items()) {
      const auto it = entries_.find(key);
      if (it == entries_.end())
        unknown.push_back(key);
      else
        it->second.set(value);
    }
    if (!unknown.empty()) {
      std::string msg = "unknown config key(s):";
      for (const auto& k : unknown) msg += " " + k;
      throw ConfigError(msg);
    }
  }

  /// Effective value of every bound key.
  nlohmann::json echo() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [key, e] : entries_) out[key] = e.get();
    return out;
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> k;
    for (const auto& e : entries_) k.push_back(e.first);
    return k;
  }

 private:
  struct Entry {
    std::function<void(const nlohmann::json&)> set;
    std::function<nlohmann::json()> get;
  };

  template <class T>
  static T convert(const std::string& key, const nlohmann::json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(key + ": expected true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(key + ": expected a string");
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      if (!v.is_array() || v.empty()) throw ConfigError(key + ": expected a non-empty integer array");
      for (const auto& e : v)
        if (!e.is_number_unsigned()) throw ConfigError(key + ": expected non-negative integers");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(key + ": expected a number");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(key + ": expected a non-negative integer");
    } else {
      if (!v.is_number_integer()) throw ConfigError(key + ": expected an integer");
    }
    return v.get<T>();
  }

  std::map<std::string, Entry> entries_;
};

inline nlohmann::json parse_config_text(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

inline nlohmann::json load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Per-experiment key tables.

inline void bind_kernel(ConfigBinder& b, KernelSchedule& k, const std::string& sigma_key) {
  b.bind(sigma_key, k.sigma0);
  b.bind("kernel.cutoff_step", k.cutoff_step);
  b.bind("kernel.half_life", k.half_life);
  b.bind("kernel.random_scaling", k.random_scaling);
}

/// Pilot settings; the mode string is stored separately and parsed later.
struct PilotSettings {
  PilotConfig pilot;
  std::string mode = "filtered";
  double transfer_umax = 8.0;
  double transfer_du = 0.05;
  std::size_t transfer_kmax = 40;
};

inline void bind_pilot(ConfigBinder& b, PilotSettings& s) {
  PilotConfig& c = s.pilot;
  b.bind("seed", c.seed);
  b.bind("pilot.period", c.period);
  b.bind("pilot.noise_kmin", c.noise_kmin);
  b.bind("pilot.noise_kmax", c.noise_kmax);
  b.bind("pilot.noise_amplitude", c.noise_amplitude);
  b.bind("pilot.u0", c.u0);
  b.bind("pilot.trials", c.trials);
  b.bind("pilot.steps", c.steps);
  b.bind("pilot.lr", c.lr);
  b.bind("pilot.mode", s.mode);
  b.bind("pilot.success_tol", c.success_tol);
  b.bind("pilot.joint_solve_g", c.joint_solve_g);
  b.bind("pilot.joint_g_rate", c.joint_g_rate);
  b.bind("pilot.transfer_umax", s.transfer_umax);
  b.bind("pilot.transfer_du", s.transfer_du);
  b.bind("pilot.transfer_kmax", s.transfer_kmax);
  bind_kernel(b, c.schedule, "kernel.sigma0_1d");
}

/// Learning-rate totals follow the iteration count after binding.
struct PlanarSettings {
  PlanarConfig planar;
  bool naive = false;
};

inline void bind_planar(ConfigBinder& b, PlanarSettings& s) {
  PlanarConfig& c = s.planar;
  b.bind("seed", c.seed);
  b.bind("align2d.naive", s.naive);
  b.bind("align2d.texture_seed", c.texture_seed);
  b.bind("align2d.image_size", c.image_size);
  b.bind("align2d.rank", c.rank);
  b.bind("align2d.patches", c.patches);
  b.bind("align2d.patch_size", c.patch_size);
  b.bind("align2d.perturb_scale", c.perturb_scale);
  b.bind("align2d.offset_radius", c.offset_radius);
  b.bind("align2d.init_scale", c.init_scale);
  b.bind("align2d.iterations", c.iterations);
  b.bind("align2d.log_every", c.log_every);
  b.bind("align2d.smooth_patches", c.smooth_patches);
  b.bind("optim.lr_tensor", c.lr_field.lr0);
  b.bind("optim.lr_pose", c.lr_warp.lr0);
  b.bind("optim.gamma", c.lr_field.gamma);
  b.bind("optim.gamma_pose", c.lr_warp.gamma);
  b.bind("optim.warmup_steps", c.lr_field.warmup);
  bind_kernel(b, c.kernel, "kernel.sigma0_2d");
  b.bind("kernel.max_length", c.kernel_opts.max_length);
  b.bind("kernel.normalize", c.kernel_opts.normalize);
}

inline PlanarConfig finalize(const PlanarSettings& s) {
  PlanarConfig c = s.planar;
  c.lr_field.total = c.lr_warp.total = c.iterations;
  c.lr_warp.warmup = c.lr_field.warmup;
  if (s.naive) c.kernel.sigma0 = 0.0;
  return c;
}

struct JointSettings {
  Joint3DConfig joint;
  bool naive = false;
  std::size_t test_views = 2;
  std::size_t refine_steps = 300;
  long checkpoint_every = 0;  // 0 = final checkpoint only
};

inline void bind_joint(ConfigBinder& b, JointSettings& s) {
  Joint3DConfig& c = s.joint;
  b.bind("seed", c.seed);
  b.bind("toy3d.naive", s.naive);
  b.bind("toy3d.pose_noise", c.pose_noise);
  b.bind("toy3d.grid_schedule", c.grid_schedule);
  b.bind("toy3d.density_rank", c.density_rank);
  b.bind("toy3d.appearance_rank", c.appearance_rank);
  b.bind("toy3d.features", c.features);
  b.bind("toy3d.hidden", c.hidden);
  b.bind("toy3d.init_scale", c.init_scale);
  b.bind("toy3d.samples", c.samples);
  b.bind("toy3d.density_shift", c.density_shift);
  b.bind("toy3d.iterations", c.iterations);
  b.bind("toy3d.batch", c.batch);
  b.bind("toy3d.log_every", c.log_every);
  b.bind("toy3d.test_views", s.test_views);
  b.bind("toy3d.refine_steps", s.refine_steps);
  b.bind("toy3d.checkpoint_every", s.checkpoint_every);
  b.bind("scene.views", c.scene.views);
  b.bind("scene.image_size", c.scene.image_size);
  b.bind("scene.radius", c.scene.radius);
  b.bind("scene.fov_x", c.scene.fov_x);
  b.bind("scene.blobs", c.scene.blobs);
  b.bind("scene.blob_extent", c.scene.blob_extent);
  b.bind("scene.blob_radius_min", c.scene.blob_radius_min);
  b.bind("scene.blob_radius_max", c.scene.blob_radius_max);
  b.bind("scene.stripe_period", c.scene.stripe_period);
  b.bind("scene.gt_grid", c.scene.gt_grid);
  b.bind("scene.gt_samples", c.scene.gt_samples);
  b.bind("scene.near", c.scene.near);
  b.bind("scene.far", c.scene.far);
  b.bind("optim.lr_tensor", c.lr_tensor.lr0);
  b.bind("optim.lr_mlp", c.lr_mlp.lr0);
  b.bind("optim.lr_pose", c.lr_pose.lr0);
  b.bind("optim.gamma", c.lr_tensor.gamma);
  b.bind("optim.gamma_pose", c.lr_pose.gamma);
  b.bind("optim.warmup_steps", c.lr_tensor.warmup);
  b.bind("optim.pose_reset_step", c.pose_reset_step);
  b.bind("kernel.sigma0_3d", c.kernel3d.sigma0);
  b.bind("kernel.sigma0_2d", c.kernel2d.sigma0);
  b.bind("kernel.cutoff_step", c.kernel3d.cutoff_step);
  b.bind("kernel.half_life", c.kernel3d.half_life);
  b.bind("kernel.random_scaling", c.kernel3d.random_scaling);
  b.bind("kernel.max_length", c.kernel_max_length);
  b.bind("loss.w1", c.weights.photometric);
  b.bind("loss.w2", c.weights.l1);
  b.bind("loss.w3", c.weights.tv);
  b.bind("loss.edge_weight", c.edge_weight);
  b.bind("loss.edge_factor", c.edge_factor);
}

inline Joint3DConfig finalize(const JointSettings& s) {
  Joint3DConfig c = s.joint;
  for (LrSchedule* l : {&c.lr_tensor, &c.lr_mlp, &c.lr_pose}) l->total = c.iterations;
  c.lr_mlp.gamma = c.lr_tensor.gamma;
  c.lr_mlp.warmup = c.lr_pose.warmup = c.lr_tensor.warmup;
  // one decay law for both kernel sets
  c.kernel2d.cutoff_step = c.kernel3d.cutoff_step;
  c.kernel2d.half_life = c.kernel3d.half_life;
  c.kernel2d.random_scaling = c.kernel3d.random_scaling;
  return s.naive ? naive_variant(c) : c;
}

}  // namespace tensorpose
