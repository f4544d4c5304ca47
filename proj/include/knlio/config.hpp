#pragma once

// Run configuration: one flat TOML-style key = value file. Every tunable
// constant of the system is a named key; unknown keys are errors so typos
// cannot silently fall back to defaults.

#include "knlio/eskf.hpp"
#include "knlio/neural_map.hpp"
#include "knlio/registration.hpp"
#include "knlio/training.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace knlio {

struct PipelineConfig {
  std::string mode = "tight";  // "semi" | "tight"
  NoiseConfig noise;
  InitialPriors priors;
  MapConfig map;
  TrainingConfig training;
  MeasurementNoise measurement;
  SemiParams semi;
  TightLimits tight;

  double init_window = 1.2;      // s of data consumed by static initialization
  size_t max_reg_points = 800;
  double reg_voxel = 0.25;       // m, registration downsample
  int max_consecutive_skips = 10;
  // Training-sample replay: past frames keep supervising the field so the
  // surface stays anchored instead of tracking the newest (noisy) estimate.
  size_t replay_pool = 20000;    // reservoir capacity, samples
  size_t replay_draw = 8000;     // samples mixed into each frame's batch
  int bootstrap_iters = 800;     // extra-depth training on the seed frame
  double mesh_voxel = 0.05;      // m
  double eval_threshold_cm = 20.0;
  double mesh_sample_density = 10.0;  // points / m^2
  uint64_t seed = 1;

  void validate() const {
    if (mode != "semi" && mode != "tight") {
      throw std::invalid_argument("PipelineConfig: mode must be semi or tight");
    }
    noise.validate();
    map.validate();
    measurement.validate();
    if (init_window <= 0.0 || reg_voxel <= 0.0 || mesh_voxel <= 0.0) {
      throw std::invalid_argument("PipelineConfig: window/voxel values must be > 0");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline PipelineConfig parse_config_text(const std::string& text, const std::string& origin) {
  PipelineConfig cfg;
  // Default resolution for online runs; standalone map tests set their own.
  cfg.map.resolution = 0.1;

  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  size_t offset = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t line_offset = offset;
    offset += line.size() + 1;
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    const size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(origin + ": missing '=' at line " + std::to_string(lineno) +
                               " (byte " + std::to_string(line_offset) + ")");
    }
    const std::string key = detail::trim(s.substr(0, eq));
    std::string value = detail::trim(s.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    auto bad_value = [&]() {
      return std::runtime_error(origin + ": bad value for " + key + " at line " +
                                std::to_string(lineno));
    };
    auto as_double = [&]() {
      try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw bad_value();
        return v;
      } catch (const std::invalid_argument&) {
        throw bad_value();
      }
    };
    auto as_int = [&]() {
      const double v = as_double();
      return int(v);
    };
    auto as_bool = [&]() {
      if (value == "true") return true;
      if (value == "false") return false;
      throw bad_value();
    };

    if (key == "pipeline.mode") cfg.mode = value;
    else if (key == "pipeline.init_window") cfg.init_window = as_double();
    else if (key == "pipeline.max_reg_points") cfg.max_reg_points = size_t(as_int());
    else if (key == "pipeline.reg_voxel") cfg.reg_voxel = as_double();
    else if (key == "pipeline.max_consecutive_skips") cfg.max_consecutive_skips = as_int();
    else if (key == "pipeline.replay_pool") cfg.replay_pool = size_t(as_int());
    else if (key == "pipeline.replay_draw") cfg.replay_draw = size_t(as_int());
    else if (key == "pipeline.bootstrap_iters") cfg.bootstrap_iters = as_int();
    else if (key == "pipeline.seed") cfg.seed = uint64_t(as_double());
    else if (key == "noise.sigma_a") cfg.noise.sigma_a = as_double();
    else if (key == "noise.sigma_g") cfg.noise.sigma_g = as_double();
    else if (key == "noise.sigma_ba") cfg.noise.sigma_ba = as_double();
    else if (key == "noise.sigma_bg") cfg.noise.sigma_bg = as_double();
    else if (key == "noise.gravity") cfg.noise.gravity_magnitude = as_double();
    else if (key == "init.sigma_p0") cfg.priors.sigma_p0 = as_double();
    else if (key == "init.sigma_v0") cfg.priors.sigma_v0 = as_double();
    else if (key == "init.sigma_theta0") cfg.priors.sigma_theta0 = as_double();
    else if (key == "init.sigma_bg0") cfg.priors.sigma_bg0 = as_double();
    else if (key == "init.sigma_ba0") cfg.priors.sigma_ba0 = as_double();
    else if (key == "init.sigma_g0") cfg.priors.sigma_g0 = as_double();
    else if (key == "init.accel_var_threshold") cfg.priors.accel_var_threshold = as_double();
    else if (key == "init.min_samples") cfg.priors.min_samples = as_int();
    else if (key == "map.feature_dim") cfg.map.feature_dim = as_int();
    else if (key == "map.hidden_dim") cfg.map.hidden_dim = as_int();
    else if (key == "map.resolution") cfg.map.resolution = as_double();
    else if (key == "map.k_neighbors") cfg.map.k_neighbors = as_int();
    else if (key == "map.k_min") cfg.map.k_min = as_int();
    else if (key == "map.query_radius_factor") cfg.map.query_radius_factor = as_double();
    else if (key == "map.weight_epsilon") cfg.map.weight_epsilon = as_double();
    else if (key == "map.truncation") cfg.map.truncation = as_double();
    else if (key == "map.offset_channel") cfg.map.offset_channel = as_bool();
    else if (key == "map.activation") {
      if (value == "silu") cfg.map.activation = Activation::kSilu;
      else if (value == "identity") cfg.map.activation = Activation::kIdentity;
      else throw bad_value();
    }
    else if (key == "map.decoder_seed") cfg.map.decoder_seed = uint64_t(as_double());
    else if (key == "map.local_window_frames") cfg.map.local_window_frames = as_int();
    else if (key == "map.decoder_warmup_frames") cfg.map.decoder_warmup_frames = as_int();
    else if (key == "training.n_free") cfg.training.n_free = as_int();
    else if (key == "training.n_behind") cfg.training.n_behind = as_int();
    else if (key == "training.iters") cfg.training.iters = as_int();
    else if (key == "training.lr") cfg.training.lr = as_double();
    else if (key == "training.batch_size") cfg.training.batch_size = as_int();
    else if (key == "training.divergence_factor") cfg.training.divergence_factor = as_double();
    else if (key == "measurement.sigma_sdf") cfg.measurement.sigma_sdf = as_double();
    else if (key == "measurement.sigma_pose_t") cfg.measurement.sigma_pose_t = as_double();
    else if (key == "measurement.sigma_pose_r") cfg.measurement.sigma_pose_r = as_double();
    else if (key == "semi.lambda0") cfg.semi.lambda0 = as_double();
    else if (key == "semi.max_iterations") cfg.semi.max_iterations = as_int();
    else if (key == "semi.eps_conv") cfg.semi.eps_conv = as_double();
    else if (key == "semi.min_inliers") cfg.semi.min_inliers = as_int();
    else if (key == "semi.kernel_scale") cfg.semi.kernel_scale = as_double();
    else if (key == "tight.max_iterations") cfg.tight.max_iterations = as_int();
    else if (key == "tight.eps_conv") cfg.tight.eps_conv = as_double();
    else if (key == "tight.min_valid") cfg.tight.min_valid = as_int();
    else if (key == "tight.kernel_scale") cfg.tight.kernel_scale = as_double();
    else if (key == "mesh.voxel") cfg.mesh_voxel = as_double();
    else if (key == "eval.threshold_cm") cfg.eval_threshold_cm = as_double();
    else if (key == "eval.mesh_sample_density") cfg.mesh_sample_density = as_double();
    else {
      throw std::runtime_error(origin + ": unknown key '" + key + "' at line " +
                               std::to_string(lineno));
    }
  }
  cfg.validate();
  return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_config: cannot open " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str(), path);
}

}  // namespace knlio
