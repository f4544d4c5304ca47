#pragma once

// Sensor-stream frontend: merging of asynchronous auxiliary LiDARs into the
// main sensor frame, motion deskewing against a pose trajectory, and IMU
// window slicing with interpolated boundary samples.

#include "knlio/eskf.hpp"
#include "knlio/geometry.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace knlio {

struct LidarPoint {
  Vec3 xyz = Vec3::Zero();
  double t = 0.0;  // absolute seconds
  int source = 0;
};

struct LidarFrame {
  std::vector<LidarPoint> points;
  double t_start = 0.0;
  double t_end = 0.0;
  int sensor_id = 0;
};

struct SensorRig {
  std::map<int, Pose> extrinsics;  // sensor -> body
  int main_id = 0;

  const Pose& extrinsic(int id) const {
    auto it = extrinsics.find(id);
    if (it == extrinsics.end()) {
      throw std::runtime_error("SensorRig: no extrinsic for sensor " + std::to_string(id));
    }
    return it->second;
  }

  void validate() const {
    extrinsic(main_id);
    for (const auto& [id, pose] : extrinsics) {
      if (!is_rotation(pose.R)) {
        throw std::runtime_error("SensorRig: invalid rotation for sensor " + std::to_string(id));
      }
    }
  }
};

// Transforms auxiliary points into the main sensor frame and concatenates
// them, keeping per-point timestamps. Auxiliary points outside the main
// frame's window are dropped.
inline LidarFrame merge_frames(const LidarFrame& main,
                               const std::vector<LidarFrame>& auxiliaries,
                               const SensorRig& rig) {
  LidarFrame out = main;
  const Pose main_inv = rig.extrinsic(main.sensor_id).inverse();
  for (const LidarFrame& aux : auxiliaries) {
    const Pose rel = main_inv * rig.extrinsic(aux.sensor_id);
    for (const LidarPoint& p : aux.points) {
      if (p.t < main.t_start || p.t > main.t_end) continue;
      LidarPoint q = p;
      q.xyz = rel * p.xyz;
      out.points.push_back(q);
    }
  }
  std::stable_sort(out.points.begin(), out.points.end(),
                   [](const LidarPoint& a, const LidarPoint& b) { return a.t < b.t; });
  return out;
}

// Re-expresses every point at the frame-end time: x' = T(t_end)^-1 T(t_p) x.
// `poses` must be time-sorted and bracket every point timestamp and t_end.
inline LidarFrame deskew(const LidarFrame& frame,
                         const std::vector<std::pair<double, Pose>>& poses) {
  if (poses.size() < 1) throw std::invalid_argument("deskew: empty pose trajectory");
  auto pose_at = [&](double t) -> Pose {
    if (t < poses.front().first - 1e-9 || t > poses.back().first + 1e-9) {
      std::ostringstream os;
      os << "deskew: timestamp " << t << " outside pose coverage [" << poses.front().first
         << ", " << poses.back().first << "]";
      throw std::runtime_error(os.str());
    }
    auto it = std::lower_bound(poses.begin(), poses.end(), t,
                               [](const std::pair<double, Pose>& a, double v) { return a.first < v; });
    if (it == poses.begin()) return it->second;
    if (it == poses.end()) return poses.back().second;
    const auto& [t1, p1] = *it;
    const auto& [t0, p0] = *(it - 1);
    if (t1 - t0 <= 0.0) return p1;
    const double u = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
    return interpolate_pose(p0, p1, u);
  };

  const Pose end_inv = pose_at(frame.t_end).inverse();
  LidarFrame out = frame;
  for (LidarPoint& p : out.points) {
    p.xyz = end_inv * (pose_at(p.t) * p.xyz);
  }
  return out;
}

// Samples in (t0, t1] plus linearly interpolated boundary samples at exactly
// t0 and t1. The stream must be time-sorted and cover the window.
inline std::vector<ImuSample> slice_imu(const std::vector<ImuSample>& stream,
                                        double t0, double t1) {
  if (t1 <= t0) throw std::invalid_argument("slice_imu: t1 must exceed t0");
  if (stream.empty() || t0 < stream.front().t - 1e-9 || t1 > stream.back().t + 1e-9) {
    std::ostringstream os;
    os << "slice_imu: window [" << t0 << ", " << t1 << "] outside stream coverage";
    if (!stream.empty()) os << " [" << stream.front().t << ", " << stream.back().t << "]";
    throw std::runtime_error(os.str());
  }
  auto interp_at = [&](double t) -> ImuSample {
    auto it = std::lower_bound(stream.begin(), stream.end(), t,
                               [](const ImuSample& s, double v) { return s.t < v; });
    if (it == stream.end()) return stream.back();
    if (it->t == t || it == stream.begin()) {
      ImuSample s = *it;
      s.t = t;
      return s;
    }
    const ImuSample& b = *it;
    const ImuSample& a = *(it - 1);
    const double u = (t - a.t) / (b.t - a.t);
    ImuSample s;
    s.t = t;
    s.omega = (1.0 - u) * a.omega + u * b.omega;
    s.accel = (1.0 - u) * a.accel + u * b.accel;
    return s;
  };

  std::vector<ImuSample> out;
  out.push_back(interp_at(t0));
  for (const ImuSample& s : stream) {
    if (s.t > t0 && s.t <= t1) out.push_back(s);
  }
  if (out.back().t < t1) out.push_back(interp_at(t1));
  return out;
}

}  // namespace knlio
