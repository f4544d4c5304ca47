#pragma once

// Estimated trajectory container and TUM-format text I/O. Quaternions exist
// only at this boundary; everything internal stays in rotation matrices.

#include "knlio/geometry.hpp"

#include <Eigen/Geometry>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace knlio {

struct TrajectoryRecord {
  struct Entry {
    double t = 0.0;
    Pose pose;
    Mat6 covariance = Mat6::Zero();  // (p, theta) marginal
  };
  std::vector<Entry> entries;

  void append(double t, const Pose& pose, const Mat6& cov = Mat6::Zero()) {
    if (!entries.empty() && t <= entries.back().t) {
      throw std::invalid_argument("TrajectoryRecord: timestamps must strictly increase");
    }
    entries.push_back({t, pose, cov});
  }
};

// `t x y z qx qy qz qw`, canonicalized to qw >= 0 so identical trajectories
// serialize byte-identically.
inline void write_tum(const TrajectoryRecord& traj, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_tum: cannot open " + path);
  char buf[256];
  for (const auto& e : traj.entries) {
    Eigen::Quaterniond q(e.pose.R);
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    std::snprintf(buf, sizeof(buf), "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n",
                  e.t, e.pose.t.x(), e.pose.t.y(), e.pose.t.z(),
                  q.x(), q.y(), q.z(), q.w());
    f << buf;
  }
  if (!f) throw std::runtime_error("write_tum: write failed for " + path);
}

inline TrajectoryRecord read_tum(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_tum: cannot open " + path);
  TrajectoryRecord out;
  std::string line;
  size_t offset = 0;
  while (std::getline(f, line)) {
    const size_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    double t, x, y, z, qx, qy, qz, qw;
    if (!(is >> t >> x >> y >> z >> qx >> qy >> qz >> qw)) {
      throw std::runtime_error("read_tum: malformed line in " + path + " at byte " +
                               std::to_string(line_offset));
    }
    Pose p;
    p.t = Vec3(x, y, z);
    p.R = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
    out.entries.push_back({t, p, Mat6::Zero()});
  }
  return out;
}

}  // namespace knlio
