#pragma once

// Synthetic ground-truth factory: analytic SDF scenes, a C2 spline trajectory
// with analytic rates, IMU synthesis by inverting the nominal kinematics, and
// sphere-traced LiDAR sweeps with authentic motion skew.

#include "knlio/eskf.hpp"
#include "knlio/geometry.hpp"
#include "knlio/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace knlio {

// ---- analytic scenes -------------------------------------------------------

struct ScenePrimitive {
  enum class Kind { kPlane, kSphere, kBox } kind = Kind::kPlane;
  Vec3 normal = Vec3::UnitZ();  // plane: unit normal, offset
  double offset = 0.0;
  Vec3 center = Vec3::Zero();   // sphere / box
  double radius = 1.0;          // sphere
  Vec3 half_extent = Vec3::Ones();  // box
  bool inverted = false;        // flips sign: interiors become free space

  static ScenePrimitive plane(const Vec3& n, double offset) {
    ScenePrimitive p;
    p.kind = Kind::kPlane;
    p.normal = n.normalized();
    p.offset = offset;
    return p;
  }
  static ScenePrimitive sphere(const Vec3& c, double r, bool inverted = false) {
    ScenePrimitive p;
    p.kind = Kind::kSphere;
    p.center = c;
    p.radius = r;
    p.inverted = inverted;
    return p;
  }
  static ScenePrimitive box(const Vec3& c, const Vec3& half, bool inverted = false) {
    ScenePrimitive p;
    p.kind = Kind::kBox;
    p.center = c;
    p.half_extent = half;
    p.inverted = inverted;
    return p;
  }

  std::pair<double, Vec3> sdf(const Vec3& q) const {
    double d = 0.0;
    Vec3 g = Vec3::UnitZ();
    switch (kind) {
      case Kind::kPlane:
        d = normal.dot(q) - offset;
        g = normal;
        break;
      case Kind::kSphere: {
        const Vec3 r = q - center;
        const double n = r.norm();
        d = n - radius;
        g = n > 1e-12 ? Vec3(r / n) : Vec3::UnitZ();
        break;
      }
      case Kind::kBox: {
        const Vec3 r = q - center;
        const Vec3 a = r.cwiseAbs() - half_extent;
        if ((a.array() <= 0.0).all()) {
          // inside: distance to the nearest face
          int axis = 0;
          a.maxCoeff(&axis);
          d = a[axis];
          g = Vec3::Zero();
          g[axis] = r[axis] >= 0.0 ? 1.0 : -1.0;
        } else {
          const Vec3 outside = a.cwiseMax(0.0);
          d = outside.norm();
          Vec3 go = outside;
          for (int i = 0; i < 3; ++i) {
            if (r[i] < 0.0) go[i] = -go[i];
          }
          g = go.normalized();
        }
        break;
      }
    }
    if (inverted) {
      d = -d;
      g = -g;
    }
    return {d, g};
  }
};

struct AnalyticScene {
  std::vector<ScenePrimitive> primitives;
};

inline std::pair<double, Vec3> scene_sdf(const AnalyticScene& scene, const Vec3& q) {
  if (scene.primitives.empty()) throw std::invalid_argument("scene_sdf: empty scene");
  double best = std::numeric_limits<double>::infinity();
  Vec3 g = Vec3::UnitZ();
  for (const ScenePrimitive& p : scene.primitives) {
    auto [d, gp] = p.sdf(q);
    if (d < best) {
      best = d;
      g = gp;
    }
  }
  return {best, g};
}

// ---- trajectory ------------------------------------------------------------

// Clamped cubic spline (zero end velocities) through the control positions in
// Hermite form, and per-segment geodesic rotation blends R_i * Exp(s(u) Theta)
// with the smoothstep s = 3u^2 - 2u^3, so the angular rate is analytic and
// zero at the knots. Outside the knot span the ends are held static.
class Trajectory {
 public:
  Trajectory(std::vector<double> times, std::vector<Pose> poses)
      : t_(std::move(times)), x_(std::move(poses)) {
    if (t_.size() != x_.size() || t_.empty()) {
      throw std::invalid_argument("Trajectory: times/poses size mismatch");
    }
    for (size_t i = 1; i < t_.size(); ++i) {
      if (t_[i] <= t_[i - 1]) throw std::invalid_argument("Trajectory: times must increase");
    }
    const size_t n = t_.size();
    v_.assign(n, Vec3::Zero());
    if (n >= 3) solve_clamped_velocities();
    theta_.resize(n > 0 ? n - 1 : 0);
    for (size_t i = 0; i + 1 < n; ++i) {
      theta_[i] = log_so3(x_[i].R.transpose() * x_[i + 1].R);
    }
  }

  double t_begin() const { return t_.front(); }
  double t_end() const { return t_.back(); }

  Pose pose(double t) const {
    if (t <= t_.front()) return x_.front();
    if (t >= t_.back()) return x_.back();
    const size_t i = segment(t);
    const double h = t_[i + 1] - t_[i];
    const double u = (t - t_[i]) / h;
    Pose out;
    out.t = hermite(i, u, h);
    const double s = u * u * (3.0 - 2.0 * u);
    out.R = x_[i].R * exp_so3(s * theta_[i]);
    return out;
  }

  Vec3 velocity(double t) const {
    if (t <= t_.front() || t >= t_.back()) return Vec3::Zero();
    const size_t i = segment(t);
    const double h = t_[i + 1] - t_[i];
    const double u = (t - t_[i]) / h;
    return hermite_d(i, u, h) / h;
  }

  Vec3 accel_world(double t) const {
    if (t <= t_.front() || t >= t_.back()) return Vec3::Zero();
    const size_t i = segment(t);
    const double h = t_[i + 1] - t_[i];
    const double u = (t - t_[i]) / h;
    return hermite_dd(i, u, h) / (h * h);
  }

  Vec3 omega_body(double t) const {
    if (t <= t_.front() || t >= t_.back()) return Vec3::Zero();
    const size_t i = segment(t);
    const double h = t_[i + 1] - t_[i];
    const double u = (t - t_[i]) / h;
    const double ds = 6.0 * u * (1.0 - u) / h;
    return ds * theta_[i];
  }

 private:
  size_t segment(double t) const {
    auto it = std::upper_bound(t_.begin(), t_.end(), t);
    size_t i = size_t(it - t_.begin());
    if (i == 0) return 0;
    if (i >= t_.size()) return t_.size() - 2;
    return i - 1;
  }

  Vec3 hermite(size_t i, double u, double h) const {
    const double u2 = u * u, u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * x_[i].t + (u3 - 2 * u2 + u) * h * v_[i] +
           (-2 * u3 + 3 * u2) * x_[i + 1].t + (u3 - u2) * h * v_[i + 1];
  }
  Vec3 hermite_d(size_t i, double u, double h) const {
    const double u2 = u * u;
    return (6 * u2 - 6 * u) * x_[i].t + (3 * u2 - 4 * u + 1) * h * v_[i] +
           (-6 * u2 + 6 * u) * x_[i + 1].t + (3 * u2 - 2 * u) * h * v_[i + 1];
  }
  Vec3 hermite_dd(size_t i, double u, double h) const {
    return (12 * u - 6) * x_[i].t + (6 * u - 4) * h * v_[i] +
           (-12 * u + 6) * x_[i + 1].t + (6 * u - 2) * h * v_[i + 1];
  }

  // Tridiagonal solve for C2 knot velocities with v(0) = v(end) = 0.
  void solve_clamped_velocities() {
    const size_t n = t_.size();
    std::vector<double> a(n, 0.0), b(n, 1.0), c(n, 0.0);
    std::vector<Vec3> d(n, Vec3::Zero());
    for (size_t i = 1; i + 1 < n; ++i) {
      const double h0 = t_[i] - t_[i - 1];
      const double h1 = t_[i + 1] - t_[i];
      a[i] = 1.0 / h0;
      b[i] = 2.0 * (1.0 / h0 + 1.0 / h1);
      c[i] = 1.0 / h1;
      d[i] = 3.0 * ((x_[i].t - x_[i - 1].t) / (h0 * h0) +
                    (x_[i + 1].t - x_[i].t) / (h1 * h1));
    }
    for (size_t i = 1; i < n; ++i) {
      const double m = a[i] / b[i - 1];
      b[i] -= m * c[i - 1];
      d[i] -= m * d[i - 1];
    }
    v_[n - 1] = Vec3::Zero();
    for (size_t i = n - 1; i-- > 0;) {
      v_[i] = (d[i] - c[i] * v_[i + 1]) / b[i];
    }
    v_[0] = Vec3::Zero();
    v_[n - 1] = Vec3::Zero();
  }

  std::vector<double> t_;
  std::vector<Pose> x_;
  std::vector<Vec3> v_;
  std::vector<Vec3> theta_;
};

// ---- IMU synthesis ---------------------------------------------------------

struct TrajectorySpec {
  std::vector<double> times;
  std::vector<Pose> poses;
  double t_data_start = 0.0;  // sampling start; before times.front() is static
  double imu_rate = 200.0;
  double lidar_rate = 10.0;
  Vec3 bias_gyro = Vec3::Zero();
  Vec3 bias_accel = Vec3::Zero();
  double sigma_g = 0.0;  // gyro noise density, rad/s * sqrt(s)
  double sigma_a = 0.0;  // accel noise density, m/s^2 * sqrt(s)
  double gravity = 9.81;
  uint64_t seed = 0;

  void validate() const {
    if (imu_rate <= 0 || lidar_rate <= 0) throw std::invalid_argument("TrajectorySpec: rates must be > 0");
    if (times.size() < 1 || times.size() != poses.size()) {
      throw std::invalid_argument("TrajectorySpec: need matching times/poses");
    }
    if (t_data_start > times.front()) {
      throw std::invalid_argument("TrajectorySpec: data start after first knot");
    }
  }
};

struct GroundTruthState {
  double t = 0.0;
  Pose pose;
  Vec3 v = Vec3::Zero();
};

struct ImuSynthesis {
  std::vector<ImuSample> samples;
  std::vector<GroundTruthState> truth;
};

// Inverts the nominal kinematics along the trajectory: the gyro reads the
// body rate plus bias and noise, the accelerometer the specific force.
inline ImuSynthesis synth_imu(const TrajectorySpec& spec) {
  spec.validate();
  const Trajectory traj(spec.times, spec.poses);
  const Vec3 g_world(0, 0, -spec.gravity);
  const double dt = 1.0 / spec.imu_rate;
  const double t0 = spec.t_data_start;
  const double t1 = traj.t_end();
  const int n = int(std::floor((t1 - t0) / dt + 0.5)) + 1;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sg = spec.sigma_g * std::sqrt(spec.imu_rate);
  const double sa = spec.sigma_a * std::sqrt(spec.imu_rate);

  ImuSynthesis out;
  out.samples.reserve(n);
  out.truth.reserve(n);
  for (int k = 0; k < n; ++k) {
    const double t = t0 + k * dt;
    const Pose P = traj.pose(t);
    ImuSample s;
    s.t = t;
    s.omega = traj.omega_body(t) + spec.bias_gyro;
    s.accel = P.R.transpose() * (traj.accel_world(t) - g_world) + spec.bias_accel;
    if (sg > 0.0) s.omega += sg * Vec3(gauss(rng), gauss(rng), gauss(rng));
    if (sa > 0.0) s.accel += sa * Vec3(gauss(rng), gauss(rng), gauss(rng));
    out.samples.push_back(s);
    out.truth.push_back({t, P, traj.velocity(t)});
  }
  return out;
}

// ---- LiDAR synthesis -------------------------------------------------------

struct ScanPattern {
  int rings = 16;
  int points_per_ring = 180;
  double vfov_deg = 40.0;
  double period = 0.1;     // s per sweep
  double max_range = 60.0;  // m

  void validate() const {
    if (rings < 1 || points_per_ring < 1) throw std::invalid_argument("ScanPattern: counts must be positive");
    if (!(vfov_deg > 0.0) || vfov_deg >= 180.0) throw std::invalid_argument("ScanPattern: FOV out of range");
    if (!(period > 0.0) || !(max_range > 0.0)) throw std::invalid_argument("ScanPattern: period/range must be > 0");
  }
};

// Sphere-traces one ray; returns hit distance or a negative value on miss.
inline double sphere_trace(const AnalyticScene& scene, const Vec3& origin,
                           const Vec3& dir, double max_range) {
  double t = 0.0;
  for (int step = 0; step < 128; ++step) {
    const auto [d, g] = scene_sdf(scene, origin + t * dir);
    if (d < 0.0) return -1.0;  // started inside or numerically crossed
    if (d < 1e-4) return t;
    t += d;
    if (t > max_range) return -1.0;
  }
  return -1.0;
}

// One mechanical sweep: each azimuth column fires all rings at its own
// instant from the instantaneous sensor pose, giving authentic skew. Points
// are in the sensor frame with absolute timestamps; misses are dropped.
inline LidarFrame synth_scan(const AnalyticScene& scene, const Trajectory& traj,
                             double t_start, const ScanPattern& pattern,
                             const Pose& extrinsic = Pose{}, int sensor_id = 0) {
  pattern.validate();
  LidarFrame frame;
  frame.t_start = t_start;
  frame.t_end = t_start + pattern.period;
  frame.sensor_id = sensor_id;
  const double vfov = pattern.vfov_deg * M_PI / 180.0;
  for (int col = 0; col < pattern.points_per_ring; ++col) {
    const double az = 2.0 * M_PI * col / pattern.points_per_ring;
    const double t_fire = t_start + pattern.period * col / pattern.points_per_ring;
    const Pose sensor = traj.pose(t_fire) * extrinsic;
    for (int ring = 0; ring < pattern.rings; ++ring) {
      const double el = pattern.rings == 1
                            ? 0.0
                            : -0.5 * vfov + vfov * ring / (pattern.rings - 1);
      const Vec3 dir_s(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const Vec3 dir_w = sensor.R * dir_s;
      const double range = sphere_trace(scene, sensor.t, dir_w, pattern.max_range);
      if (range < 0.0) continue;
      LidarPoint p;
      p.xyz = range * dir_s;
      p.t = t_fire;
      p.source = sensor_id;
      frame.points.push_back(p);
    }
  }
  return frame;
}

// ---- scenarios -------------------------------------------------------------

struct Scenario {
  std::string name;
  AnalyticScene scene;
  TrajectorySpec spec;
  SensorRig rig;
  ScanPattern pattern;
  std::vector<int> sensors;  // scan streams to generate
};

struct SimulatedDataset {
  std::vector<ImuSample> imu;
  std::vector<GroundTruthState> truth;
  std::map<int, std::vector<LidarFrame>> scans;
  SensorRig rig;
};

// Obstacles sit outside the flight envelope of every named scenario
// (|x| <= 2.7, |y| <= 2.7 at z ~ 1.3); paths must keep positive clearance
// or scans fire from inside geometry and come back empty.
inline AnalyticScene make_room_scene() {
  AnalyticScene scene;
  scene.primitives.push_back(ScenePrimitive::box({0, 0, 1.5}, {5, 4, 1.5}, true));
  scene.primitives.push_back(ScenePrimitive::sphere({3.8, 2.8, 0.7}, 0.7));
  scene.primitives.push_back(ScenePrimitive::box({-3.6, -2.6, 0.9}, {0.45, 0.45, 0.9}));
  scene.primitives.push_back(ScenePrimitive::box({-1.5, 3.4, 0.5}, {1.0, 0.5, 0.5}));
  return scene;
}

inline Scenario make_scenario(const std::string& name, uint64_t seed,
                              bool dual_rig = false) {
  Scenario sc;
  sc.name = name;
  sc.scene = make_room_scene();
  sc.pattern.rings = 12;
  sc.pattern.points_per_ring = 150;
  sc.pattern.max_range = 30.0;

  sc.rig.main_id = 0;
  sc.rig.extrinsics[0] = Pose{};
  sc.sensors = {0};
  if (dual_rig) {
    // Vertically mounted second LiDAR, slightly offset.
    Pose vert;
    vert.R = exp_so3(Vec3(M_PI / 2.0, 0, 0));
    vert.t = Vec3(0.05, 0.0, 0.12);
    sc.rig.extrinsics[1] = vert;
    sc.sensors.push_back(1);
  }

  sc.spec.seed = seed;
  sc.spec.t_data_start = 0.0;
  sc.spec.imu_rate = 200.0;
  sc.spec.lidar_rate = 10.0;
  sc.spec.sigma_g = 5e-4;
  sc.spec.sigma_a = 5e-3;
  sc.spec.bias_gyro = Vec3(0.002, -0.001, 0.0015);
  sc.spec.bias_accel = Vec3(0.02, -0.015, 0.01);

  const double t0 = 1.2;  // static prefix for initialization
  const Vec3 base(0.0, 0.0, 1.3);
  auto yawpose = [&](double x, double y, double z, double yaw) {
    Pose p;
    p.t = Vec3(x, y, z) + base;
    p.R = exp_so3(Vec3(0, 0, yaw));
    return p;
  };

  if (name == "static_10s") {
    sc.spec.times = {t0, t0 + 10.0};
    sc.spec.poses = {yawpose(0, 0, 0, 0), yawpose(0, 0, 0, 0)};
  } else if (name == "figure_eight_60s") {
    const double T = 60.0;
    const int n = 41;
    for (int i = 0; i < n; ++i) {
      const double u = double(i) / (n - 1);
      const double t = t0 + u * T;
      const double a = 2.0 * M_PI * 2.0 * u;  // two laps
      const double x = 2.2 * std::sin(a);
      const double y = 1.4 * std::sin(2.0 * a);
      const double yaw = 0.5 * std::sin(a + 0.4);
      sc.spec.times.push_back(t);
      sc.spec.poses.push_back(yawpose(x, y, 0.15 * std::sin(2.5 * a), yaw));
    }
  } else if (name == "aggressive_spin_30s") {
    const double T = 30.0;
    const int n = 31;
    double yaw = 0.0;
    for (int i = 0; i < n; ++i) {
      const double u = double(i) / (n - 1);
      const double t = t0 + u * T;
      const double a = 2.0 * M_PI * 1.5 * u;
      yaw += (i > 0) ? 0.85 : 0.0;  // sustained fast spin, ~49 deg/s
      sc.spec.times.push_back(t);
      Pose p = yawpose(2.0 * std::sin(a), 1.2 * std::cos(a) - 1.2, 0.2 * std::sin(3.0 * a), 0.0);
      p.R = exp_so3(Vec3(0, 0, yaw)) * exp_so3(Vec3(0.12 * std::sin(2.0 * a), 0.1 * std::cos(a), 0));
      sc.spec.poses.push_back(p);
    }
  } else if (name == "office_loop_15s") {
    const double T = 15.0;
    std::vector<std::array<double, 4>> wp = {
        {0, 0, 0, 0},      {1.8, 0, 0, 0},    {2.6, 0.8, 0, 1.2},  {2.6, 2.0, 0, 1.57},
        {1.2, 2.6, 0, 2.8}, {-1.2, 2.4, 0, 3.3}, {-2.4, 1.0, 0, 4.4}, {-2.2, -1.0, 0, 4.9},
        {-0.8, -1.8, 0, 5.8}, {0.8, -1.6, 0, 6.28}, {0, 0, 0, 6.28}};
    for (size_t i = 0; i < wp.size(); ++i) {
      sc.spec.times.push_back(t0 + T * double(i) / double(wp.size() - 1));
      sc.spec.poses.push_back(yawpose(wp[i][0], wp[i][1], wp[i][2], wp[i][3]));
    }
  } else {
    throw std::invalid_argument("make_scenario: unknown scenario " + name);
  }
  return sc;
}

inline SimulatedDataset simulate(const Scenario& sc) {
  SimulatedDataset out;
  out.rig = sc.rig;
  ImuSynthesis imu = synth_imu(sc.spec);
  out.imu = std::move(imu.samples);
  out.truth = std::move(imu.truth);

  const Trajectory traj(sc.spec.times, sc.spec.poses);
  const double period = 1.0 / sc.spec.lidar_rate;
  ScanPattern pat = sc.pattern;
  pat.period = period;
  for (int id : sc.sensors) {
    const Pose& ext = out.rig.extrinsic(id);
    std::vector<LidarFrame> frames;
    for (double t = sc.spec.t_data_start; t + period <= traj.t_end() + 1e-9; t += period) {
      frames.push_back(synth_scan(sc.scene, traj, t, pat, ext, id));
    }
    out.scans[id] = std::move(frames);
  }
  return out;
}

}  // namespace knlio
