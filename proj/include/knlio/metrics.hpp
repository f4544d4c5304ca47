#pragma once

// Evaluation: ATE-RMSE after rigid Umeyama alignment, and reconstruction
// accuracy / completeness / chamfer / F-score against reference surface
// points. Distances use the exact kd-tree.

#include "knlio/geometry.hpp"
#include "knlio/kdtree.hpp"
#include "knlio/marching_cubes.hpp"
#include "knlio/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace knlio {

struct MapMetrics {
  double accuracy_cm = 0.0;
  double completeness_cm = 0.0;
  double chamfer_l1_cm = 0.0;
  double f_score = 0.0;  // percent
  double threshold_cm = 20.0;
};

// Nearest-timestamp association within `max_dt`, rigid Umeyama alignment of
// the estimated positions onto the reference, then RMSE of the residuals.
inline double ate_rmse(const TrajectoryRecord& estimated, const TrajectoryRecord& reference,
                       double max_dt = 0.01) {
  std::vector<Vec3> est, ref;
  size_t j = 0;
  for (const auto& e : estimated.entries) {
    while (j + 1 < reference.entries.size() &&
           std::abs(reference.entries[j + 1].t - e.t) <= std::abs(reference.entries[j].t - e.t)) {
      ++j;
    }
    if (reference.entries.empty()) break;
    if (std::abs(reference.entries[j].t - e.t) <= max_dt) {
      est.push_back(e.pose.t);
      ref.push_back(reference.entries[j].pose.t);
    }
  }
  if (est.size() < 3) {
    throw std::runtime_error("ate_rmse: fewer than 3 temporally associated pairs");
  }
  const Pose align = umeyama_align(est, ref);
  double sq = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    sq += (align * est[i] - ref[i]).squaredNorm();
  }
  return std::sqrt(sq / double(est.size()));
}

inline MapMetrics map_metrics(const std::vector<Vec3>& reconstructed,
                              const std::vector<Vec3>& reference,
                              double threshold_cm = 20.0) {
  if (reconstructed.empty() || reference.empty()) {
    throw std::invalid_argument("map_metrics: point sets must be non-empty");
  }
  KdTree3 ref_tree, rec_tree;
  ref_tree.build(reference);
  rec_tree.build(reconstructed);

  const double thr_m = threshold_cm / 100.0;
  auto directed = [](const std::vector<Vec3>& from, const KdTree3& to, double thr,
                     double& mean_out, double& frac_out) {
    double sum = 0.0;
    size_t within = 0;
    std::vector<Neighbor> nb;
    for (const Vec3& p : from) {
      to.knn(p, 1, std::numeric_limits<double>::infinity(), nb);
      const double d = std::sqrt(nb.front().d2);
      sum += d;
      if (d <= thr) ++within;
    }
    mean_out = sum / double(from.size());
    frac_out = double(within) / double(from.size());
  };

  double acc_m = 0.0, precision = 0.0, comp_m = 0.0, recall = 0.0;
  directed(reconstructed, ref_tree, thr_m, acc_m, precision);
  directed(reference, rec_tree, thr_m, comp_m, recall);

  MapMetrics m;
  m.threshold_cm = threshold_cm;
  m.accuracy_cm = acc_m * 100.0;
  m.completeness_cm = comp_m * 100.0;
  m.chamfer_l1_cm = 0.5 * (m.accuracy_cm + m.completeness_cm);
  m.f_score = (precision + recall) > 0.0
                  ? 100.0 * 2.0 * precision * recall / (precision + recall)
                  : 0.0;
  return m;
}

// Area-weighted surface sampling of a mesh at the given density (points/m^2),
// deterministic for a fixed seed. Each triangle gets at least one sample if
// its expected count rounds up.
inline std::vector<Vec3> sample_mesh_points(const TriangleMesh& mesh, double density,
                                            uint64_t seed = 0) {
  std::vector<Vec3> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& tri : mesh.triangles) {
    const Vec3 a = mesh.vertices[size_t(tri[0])].cast<double>();
    const Vec3 b = mesh.vertices[size_t(tri[1])].cast<double>();
    const Vec3 c = mesh.vertices[size_t(tri[2])].cast<double>();
    const double area = 0.5 * (b - a).cross(c - a).norm();
    const double expect = area * density;
    int n = int(expect);
    if (unit(rng) < expect - n) ++n;
    for (int i = 0; i < n; ++i) {
      double u = unit(rng), v = unit(rng);
      if (u + v > 1.0) {
        u = 1.0 - u;
        v = 1.0 - v;
      }
      out.push_back(a + u * (b - a) + v * (c - a));
    }
  }
  return out;
}

}  // namespace knlio
