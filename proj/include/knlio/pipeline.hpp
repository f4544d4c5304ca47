#pragma once

// The odometry engine: static initialization, then per frame
// propagate -> deskew -> correct (semi or tight) -> map insert + train.
// A frame never aborts a run; failures become diagnostics, and a streak of
// skipped corrections marks the whole run failed in the report.

#include "knlio/config.hpp"
#include "knlio/dataset_io.hpp"
#include "knlio/eskf.hpp"
#include "knlio/log.hpp"
#include "knlio/neural_map.hpp"
#include "knlio/preprocess.hpp"
#include "knlio/registration.hpp"
#include "knlio/trajectory.hpp"
#include "knlio/training.hpp"

#include <json.hpp>

#include <chrono>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace knlio {

struct FrameDiagnostics {
  int frame_index = 0;
  double t = 0.0;
  bool corrected = false;
  bool degraded = false;
  int reg_iterations = 0;
  int inliers = 0;
  double reg_cost = 0.0;
  size_t points_added = 0;
  double train_loss = 0.0;
  double ms = 0.0;
  std::string note;
};

struct RunReport {
  bool initialized = false;
  bool failed = false;
  std::string failure_reason;
  std::string mode;
  uint64_t seed = 0;
  int frames = 0;
  int skips = 0;
  int max_skip_streak = 0;
  double total_ms = 0.0;
  std::vector<FrameDiagnostics> frame_diags;
};

inline std::string report_to_json(const RunReport& r) {
  nlohmann::json j;
  j["initialized"] = r.initialized;
  j["failed"] = r.failed;
  j["failure_reason"] = r.failure_reason;
  j["mode"] = r.mode;
  j["seed"] = r.seed;
  j["frames"] = r.frames;
  j["skips"] = r.skips;
  j["max_skip_streak"] = r.max_skip_streak;
  j["total_ms"] = r.total_ms;
  j["per_frame"] = nlohmann::json::array();
  for (const auto& d : r.frame_diags) {
    j["per_frame"].push_back({{"frame", d.frame_index},
                              {"t", d.t},
                              {"corrected", d.corrected},
                              {"degraded", d.degraded},
                              {"iterations", d.reg_iterations},
                              {"inliers", d.inliers},
                              {"cost", d.reg_cost},
                              {"points_added", d.points_added},
                              {"train_loss", d.train_loss},
                              {"ms", d.ms},
                              {"note", d.note}});
  }
  return j.dump(2);
}

class Engine {
 public:
  Engine(const PipelineConfig& cfg, const SensorRig& rig)
      : cfg_(cfg), rig_(rig), map_(cfg.map),
        replay_rng_(cfg.seed ^ 0x7265706c61793full) {
    cfg_.validate();
    rig_.validate();
  }

  bool initialized() const { return initialized_; }
  const NominalState& state() const { return state_; }
  const ErrorBelief& belief() const { return belief_; }
  const TrajectoryRecord& trajectory() const { return traj_; }
  NeuralMap& map() { return map_; }
  const NeuralMap& map() const { return map_; }
  const RunReport& report() const { return report_; }

  void initialize(std::span<const ImuSample> static_samples) {
    std::tie(state_, belief_) = init_from_static(static_samples, cfg_.noise, cfg_.priors);
    last_t_ = static_samples.back().t;
    initialized_ = true;
    report_.initialized = true;
    logf(LogLevel::kInfo, "initialized at t=%.3f, bg=[%.4f %.4f %.4f]", last_t_,
         state_.bg.x(), state_.bg.y(), state_.bg.z());
  }

  double last_time() const { return last_t_; }

  // `frame` is the merged frame in main-sensor coordinates; `imu` must cover
  // (last_time, frame.t_end] including interpolated boundary samples.
  std::pair<Pose, FrameDiagnostics> process_frame(const LidarFrame& frame,
                                                  const std::vector<ImuSample>& imu) {
    if (!initialized_) throw std::runtime_error("Engine: not initialized");
    const auto wall0 = std::chrono::steady_clock::now();
    FrameDiagnostics diag;
    diag.frame_index = frame_index_;
    diag.t = frame.t_end;

    // 1. Propagate through the IMU window, keeping the sub-trajectory.
    std::vector<std::pair<double, Pose>> body_traj;
    std::tie(state_, belief_) = propagate_span(state_, belief_, imu, cfg_.noise, &body_traj);
    last_t_ = frame.t_end;

    // 2. Deskew in main-sensor coordinates against the sensor trajectory.
    const Pose& E_main = rig_.extrinsic(rig_.main_id);
    std::vector<std::pair<double, Pose>> sensor_traj;
    sensor_traj.reserve(body_traj.size());
    for (const auto& [t, P] : body_traj) sensor_traj.emplace_back(t, P * E_main);
    LidarFrame deskewed;
    bool have_points = !frame.points.empty();
    if (have_points) {
      try {
        deskewed = deskew(frame, sensor_traj);
      } catch (const std::exception& e) {
        diag.note = e.what();
        have_points = false;
      }
    }

    // 3. Correction.
    bool skipped = true;
    if (have_points && !map_.empty()) {
      const std::vector<Vec3> sensor_pts =
          select_registration_points(deskewed, cfg_.max_reg_points, cfg_.reg_voxel);
      std::vector<Vec3> body_pts;
      body_pts.reserve(sensor_pts.size());
      for (const Vec3& p : sensor_pts) body_pts.push_back(E_main * p);
      try {
        if (cfg_.mode == "semi") {
          RegistrationResult reg =
              register_semi(body_pts, state_.pose(), map_, cfg_.measurement, cfg_.semi);
          diag.reg_iterations = reg.iterations;
          diag.inliers = reg.inlier_count;
          diag.reg_cost = reg.final_cost;
          if (reg.converged) {
            std::tie(state_, belief_) = update_semi(state_, belief_, reg, cfg_.measurement);
            skipped = false;
          }
        } else {
          auto [new_state, new_belief, reg] =
              update_tight(body_pts, state_, belief_, map_, cfg_.measurement, cfg_.tight);
          diag.reg_iterations = reg.iterations;
          diag.inliers = reg.inlier_count;
          diag.reg_cost = reg.final_cost;
          if (reg.converged) {
            state_ = new_state;
            belief_ = new_belief;
            skipped = false;
          }
        }
      } catch (const std::exception& e) {
        diag.note = e.what();
      }
    } else if (map_.empty()) {
      diag.note = "cold start: map seeded at predicted pose";
      skipped = false;  // defined behavior, not degradation
    }

    diag.corrected = !skipped && !map_.empty();
    if (skipped) {
      diag.degraded = true;
      ++consecutive_skips_;
      ++report_.skips;
      report_.max_skip_streak = std::max(report_.max_skip_streak, consecutive_skips_);
      if (consecutive_skips_ >= cfg_.max_consecutive_skips && !report_.failed) {
        report_.failed = true;
        report_.failure_reason = "degraded: " + std::to_string(consecutive_skips_) +
                                 " consecutive skipped corrections at t=" + std::to_string(frame.t_end);
        logf(LogLevel::kWarn, "%s", report_.failure_reason.c_str());
      }
    } else {
      consecutive_skips_ = 0;
    }

    // 4. Map insert and training at the corrected pose.
    if (have_points) {
      const Pose T_body = state_.pose();
      std::map<int, std::vector<Vec3>> world_by_source;
      const size_t stride = std::max<size_t>(1, deskewed.points.size() / 1000);
      std::vector<Vec3> world_all;
      world_all.reserve(deskewed.points.size());
      for (size_t i = 0; i < deskewed.points.size(); ++i) {
        const LidarPoint& p = deskewed.points[i];
        const Vec3 w = T_body * (E_main * p.xyz);
        world_all.push_back(w);
        if (i % stride == 0) world_by_source[p.source].push_back(w);
      }
      diag.points_added = map_.insert_frame(world_all, frame_index_);

      std::vector<TrainingSample> samples;
      std::mt19937_64 ray_rng(cfg_.seed ^ (0x9e3779b97f4a7c15ull * uint64_t(frame_index_ + 1)));
      for (const auto& [source, pts] : world_by_source) {
        const Vec3 origin = (T_body * rig_.extrinsic(source)).t;
        std::vector<TrainingSample> s = sample_training_points(
            pts, origin, cfg_.map.truncation, cfg_.training.n_free, cfg_.training.n_behind,
            ray_rng);
        samples.insert(samples.end(), s.begin(), s.end());
      }
      // Mix in replayed samples from earlier frames, then absorb this frame
      // into the reservoir: past supervision keeps the field anchored where
      // it was first observed instead of tracking the estimate.
      std::vector<TrainingSample> batch = samples;
      if (!replay_.empty() && cfg_.replay_draw > 0) {
        for (size_t i = 0; i < cfg_.replay_draw; ++i) {
          batch.push_back(replay_[replay_rng_() % replay_.size()]);
        }
      }
      for (const TrainingSample& s : samples) {
        if (replay_.size() < cfg_.replay_pool) {
          replay_.push_back(s);
        } else if (cfg_.replay_pool > 0) {
          const uint64_t j = replay_rng_() % (replay_seen_ + 1);
          if (j < cfg_.replay_pool) replay_[size_t(j)] = s;
        }
        ++replay_seen_;
      }
      TrainingConfig tc = cfg_.training;
      tc.seed = cfg_.seed * 1000003ull + uint64_t(frame_index_);
      // The seed frame defines the datum every later frame registers against,
      // so it gets a deeper optimization pass than the steady-state schedule.
      if (frame_index_ == 0) tc.iters = std::max(tc.iters, cfg_.bootstrap_iters);
      const std::vector<double> trace = optimize_local_map(map_, batch, tc);
      diag.train_loss = trace.empty() ? 0.0 : trace.back();
    }

    // 5. Record.
    Mat6 cov;
    cov.topLeftCorner<3, 3>() = belief_.P.block<3, 3>(kIdxP, kIdxP);
    cov.bottomRightCorner<3, 3>() = belief_.P.block<3, 3>(kIdxTheta, kIdxTheta);
    cov.topRightCorner<3, 3>() = belief_.P.block<3, 3>(kIdxP, kIdxTheta);
    cov.bottomLeftCorner<3, 3>() = belief_.P.block<3, 3>(kIdxTheta, kIdxP);
    traj_.append(frame.t_end, state_.pose(), cov);

    diag.ms = std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - wall0).count();
    report_.frame_diags.push_back(diag);
    ++report_.frames;
    ++frame_index_;
    return {state_.pose(), diag};
  }

  RunReport& mutable_report() { return report_; }

 private:
  PipelineConfig cfg_;
  SensorRig rig_;
  NominalState state_;
  ErrorBelief belief_;
  NeuralMap map_;
  TrajectoryRecord traj_;
  RunReport report_;
  double last_t_ = 0.0;
  int frame_index_ = 0;
  int consecutive_skips_ = 0;
  bool initialized_ = false;
  std::vector<TrainingSample> replay_;
  std::mt19937_64 replay_rng_;
  uint64_t replay_seen_ = 0;
};

struct RunResult {
  TrajectoryRecord trajectory;
  RunReport report;
};

// Full run over a loaded dataset: initialization window, auxiliary merging,
// then one process_frame per main frame. The returned engine carries the map.
inline RunResult run_odometry(const Dataset& data, const PipelineConfig& cfg, Engine& engine) {
  const auto wall0 = std::chrono::steady_clock::now();
  RunResult out;
  if (data.imu.size() < 2) throw std::runtime_error("run_odometry: IMU stream too short");

  const double init_end = data.imu.front().t + cfg.init_window;
  std::vector<ImuSample> init_window;
  for (const ImuSample& s : data.imu) {
    if (s.t <= init_end + 1e-9) init_window.push_back(s);
  }
  engine.initialize(init_window);

  const auto main_it = data.scans.find(data.rig.main_id);
  if (main_it == data.scans.end()) throw std::runtime_error("run_odometry: no main-sensor scans");

  for (const LidarFrame& main : main_it->second) {
    if (main.t_end <= engine.last_time() + 1e-9) continue;  // inside init window
    if (main.t_end > data.imu.back().t + 1e-9) break;       // beyond IMU coverage

    std::vector<LidarFrame> aux;
    for (const auto& [id, frames] : data.scans) {
      if (id == data.rig.main_id) continue;
      for (const LidarFrame& f : frames) {
        if (f.t_start < main.t_end && f.t_end > main.t_start) aux.push_back(f);
      }
    }
    const LidarFrame merged = merge_frames(main, aux, data.rig);
    const std::vector<ImuSample> span = slice_imu(data.imu, engine.last_time(), main.t_end);
    engine.process_frame(merged, span);
  }

  out.trajectory = engine.trajectory();
  out.report = engine.report();
  out.report.mode = cfg.mode;
  out.report.seed = cfg.seed;
  out.report.total_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - wall0).count();
  return out;
}

}  // namespace knlio
