#pragma once

// Cloud-to-field alignment. Semi-coupled mode solves a standalone robust
// least-squares for the pose and feeds it to the filter as a 6-dim pose
// observation; tightly-coupled mode folds per-point SDF residuals directly
// into an iterated error-state update.
//
// Perturbation convention is right-multiplicative everywhere: a pose step is
// R <- R Exp(dtheta), t <- t + dt, so the SDF residual row for a body point p
// with field gradient g at the transformed point is [g^T, -g^T R p^].
// The source derivations print the rotation block both as (-p x n) (left/
// world form) and as +n^T R p^ J_r^{-1}(R); both reduce to the row above
// once re-derived in this convention, which the finite-difference tests pin.

#include "knlio/eskf.hpp"
#include "knlio/geometry.hpp"
#include "knlio/neural_map.hpp"
#include "knlio/preprocess.hpp"

#include <cstdint>
#include <tuple>
#include <unordered_set>
#include <vector>

namespace knlio {

struct MeasurementNoise {
  double sigma_sdf = 0.1;       // m, per-point SDF residual
  double sigma_pose_t = 0.005;  // m, semi-coupled pose observation
  double sigma_pose_r = 0.001;  // rad

  void validate() const {
    if (sigma_sdf <= 0 || sigma_pose_t <= 0 || sigma_pose_r <= 0) {
      throw std::invalid_argument("MeasurementNoise: entries must be positive");
    }
  }
};

struct RegistrationResult {
  Pose pose;
  bool converged = false;
  int iterations = 0;
  double final_cost = 0.0;
  int inlier_count = 0;
  Mat6 pose_covariance = Mat6::Identity();
};

struct SemiParams {
  double lambda0 = 1e-4;
  int max_iterations = 30;
  // Steps below 0.1 mm / 0.1 mrad are beneath the field noise floor; a
  // tighter tolerance only buys extra full-cloud field evaluations.
  double eps_conv = 1e-4;
  double cost_plateau = 1e-6;  // relative improvement considered converged
  int min_inliers = 30;
  double kernel_scale = 0.3;  // m
};

struct TightLimits {
  int max_iterations = 5;
  double eps_conv = 1e-4;
  int min_valid = 30;
  double kernel_scale = 0.3;  // m
};

// Geman-McClure weight: w = (s^2 / (s^2 + r^2))^2, 1 at zero residual.
inline double robust_weight(double residual, double kernel_scale) {
  if (!(kernel_scale > 0.0)) throw std::invalid_argument("robust_weight: scale must be > 0");
  const double s2 = kernel_scale * kernel_scale;
  const double q = s2 / (s2 + residual * residual);
  return q * q;
}

// Matching robust loss, rho(r) = s^2 r^2 / (2 (s^2 + r^2)); rho'(r) = r w(r).
inline double robust_loss(double residual, double kernel_scale) {
  const double s2 = kernel_scale * kernel_scale;
  const double r2 = residual * residual;
  return 0.5 * s2 * r2 / (s2 + r2);
}

// Deterministic voxel-grid downsample: first point per voxel in scan order,
// then an even stride if the voxel survivors still exceed the budget.
inline std::vector<Vec3> select_registration_points(const LidarFrame& frame,
                                                    size_t max_points,
                                                    double voxel_size) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("select_registration_points: voxel must be > 0");
  std::vector<Vec3> kept;
  std::unordered_set<uint64_t> seen;
  seen.reserve(frame.points.size());
  const double inv = 1.0 / voxel_size;
  for (const LidarPoint& p : frame.points) {
    if (!p.xyz.allFinite()) continue;
    const int64_t ix = int64_t(std::floor(p.xyz.x() * inv));
    const int64_t iy = int64_t(std::floor(p.xyz.y() * inv));
    const int64_t iz = int64_t(std::floor(p.xyz.z() * inv));
    const uint64_t key = (uint64_t(ix + (1ll << 20)) << 42) ^
                         (uint64_t(iy + (1ll << 20)) << 21) ^
                         uint64_t(iz + (1ll << 20));
    if (seen.insert(key).second) kept.push_back(p.xyz);
  }
  if (max_points > 0 && kept.size() > max_points) {
    const size_t step = (kept.size() + max_points - 1) / max_points;
    std::vector<Vec3> strided;
    for (size_t i = 0; i < kept.size(); i += step) strided.push_back(kept[i]);
    kept.swap(strided);
  }
  return kept;
}

namespace detail {

struct FieldRows {
  Eigen::VectorXd sdf;       // valid residual magnitudes
  Eigen::MatrixXd grad;      // 3 x m gradients at the world points
  std::vector<size_t> idx;   // indices into the input cloud
};

inline FieldRows sample_field(const std::vector<Vec3>& body_points, const Pose& T,
                              const NeuralMap& map) {
  FieldRows rows;
  std::vector<double> sdfs;
  std::vector<Vec3> grads;
  for (size_t i = 0; i < body_points.size(); ++i) {
    const FieldSample s = map.query_sdf(T * body_points[i]);
    if (!s.valid) continue;
    sdfs.push_back(s.sdf);
    grads.push_back(s.gradient);
    rows.idx.push_back(i);
  }
  rows.sdf.resize(Eigen::Index(sdfs.size()));
  rows.grad.resize(3, Eigen::Index(sdfs.size()));
  for (size_t i = 0; i < sdfs.size(); ++i) {
    rows.sdf[Eigen::Index(i)] = sdfs[i];
    rows.grad.col(Eigen::Index(i)) = grads[i];
  }
  return rows;
}

// Points outside field coverage are charged the kernel's saturation loss
// (sup rho = s^2/2), so the objective is defined over the full point set and
// a step can never pay for itself by pushing points out of coverage.
inline double robust_objective(const Eigen::VectorXd& residuals, size_t total_points,
                               double scale) {
  double c = 0.5 * scale * scale * double(total_points - size_t(residuals.size()));
  for (Eigen::Index i = 0; i < residuals.size(); ++i) c += robust_loss(residuals[i], scale);
  return c;
}

}  // namespace detail

// Levenberg-Marquardt over Sum rho(D(R p_i + t)) with Geman-McClure weights.
inline RegistrationResult register_semi(const std::vector<Vec3>& points,
                                        const Pose& init, const NeuralMap& map,
                                        const MeasurementNoise& noise = {},
                                        const SemiParams& params = {}) {
  if (map.empty()) throw std::invalid_argument("register_semi: empty map");
  if (!init.t.allFinite() || !is_rotation(init.R)) {
    throw std::invalid_argument("register_semi: non-finite initial pose");
  }
  RegistrationResult res;
  res.pose = init;

  Pose T = init;
  detail::FieldRows rows = detail::sample_field(points, T, map);
  res.inlier_count = int(rows.idx.size());
  if (res.inlier_count < params.min_inliers) {
    res.converged = false;
    res.final_cost = std::numeric_limits<double>::quiet_NaN();
    return res;
  }

  double lambda = params.lambda0;
  double cost = detail::robust_objective(rows.sdf, points.size(), params.kernel_scale);
  bool accepted_any = false;

  for (int it = 0; it < params.max_iterations; ++it) {
    res.iterations = it + 1;
    const Eigen::Index m = rows.sdf.size();
    Mat6 JtWJ = Mat6::Zero();
    Vec6 JtWr = Vec6::Zero();
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vec3 g = rows.grad.col(i);
      const Vec3 pb = points[rows.idx[size_t(i)]];
      Vec6 J;
      J.head<3>() = g;
      J.tail<3>() = -(T.R * hat(pb)).transpose() * g;  // -g^T R p^ as a column
      const double w = robust_weight(rows.sdf[i], params.kernel_scale);
      JtWJ += w * J * J.transpose();
      JtWr += w * J * rows.sdf[i];
    }

    const Mat6 damped = JtWJ + lambda * Mat6(JtWJ.diagonal().cwiseMax(1e-12).asDiagonal());
    Eigen::LDLT<Mat6> ldlt(damped);
    if (ldlt.info() != Eigen::Success) {
      lambda *= 10.0;
      continue;
    }
    const Vec6 delta = ldlt.solve(-JtWr);
    if (!delta.allFinite()) {
      lambda *= 10.0;
      continue;
    }

    Pose T_try{T.R * exp_so3(delta.tail<3>()), T.t + delta.head<3>()};
    detail::FieldRows rows_try = detail::sample_field(points, T_try, map);
    if (int(rows_try.idx.size()) < params.min_inliers) {
      lambda *= 10.0;
      continue;
    }
    const double cost_try =
        detail::robust_objective(rows_try.sdf, points.size(), params.kernel_scale);

    if (cost_try <= cost) {
      accepted_any = true;
      T = T_try;
      const double gain = cost - cost_try;
      rows = std::move(rows_try);
      cost = cost_try;
      lambda = std::max(lambda * 0.5, 1e-12);
      if (delta.norm() < params.eps_conv ||
          gain <= params.cost_plateau * std::max(cost, 1e-30)) {
        res.converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e8) break;
    }
    if (it == 0 && delta.norm() < params.eps_conv) {
      // Zero-residual fixed point: nothing to move.
      res.converged = true;
      break;
    }
  }
  if (!res.converged) {
    // A fully-iterated solve that kept improving still yields a usable pose;
    // only a solver that never accepted a step is reported failed.
    res.converged = accepted_any && std::isfinite(cost);
  }

  res.pose = T;
  res.inlier_count = int(rows.idx.size());
  res.final_cost = cost;

  Mat6 JtWJ = Mat6::Zero();
  for (Eigen::Index i = 0; i < rows.sdf.size(); ++i) {
    const Vec3 g = rows.grad.col(i);
    const Vec3 pb = points[rows.idx[size_t(i)]];
    Vec6 J;
    J.head<3>() = g;
    J.tail<3>() = -(T.R * hat(pb)).transpose() * g;
    JtWJ += robust_weight(rows.sdf[i], params.kernel_scale) * J * J.transpose();
  }
  const Mat6 reg = JtWJ + 1e-9 * Mat6::Identity();
  res.pose_covariance =
      noise.sigma_sdf * noise.sigma_sdf * reg.ldlt().solve(Mat6::Identity());
  return res;
}

// Feeds a converged registration pose into the filter as a direct 6-dim pose
// observation: residual (t_meas - p, Log(R^T R_meas)). The rotation block of
// H is the inverse left Jacobian at the residual rotation (J_r^{-1} of the
// negated vector), which is within O(|residual|) of identity.
inline std::pair<NominalState, ErrorBelief> update_semi(const NominalState& state,
                                                        const ErrorBelief& belief,
                                                        const RegistrationResult& reg,
                                                        const MeasurementNoise& noise) {
  if (!reg.converged) return {state, belief};
  noise.validate();

  Eigen::VectorXd residual(6);
  residual.head<3>() = reg.pose.t - state.p;
  const Vec3 rtheta = log_so3(state.R.transpose() * reg.pose.R);
  residual.tail<3>() = rtheta;

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(6, kErrorDim);
  H.block<3, 3>(0, kIdxP) = Mat3::Identity();
  H.block<3, 3>(3, kIdxTheta) = right_jacobian_inv(-rtheta);

  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(6, 6);
  V.topLeftCorner<3, 3>() = noise.sigma_pose_t * noise.sigma_pose_t * Mat3::Identity();
  V.bottomRightCorner<3, 3>() = noise.sigma_pose_r * noise.sigma_pose_r * Mat3::Identity();

  ErrorBelief upd = kalman_update(belief, H, residual, V);
  NominalState out_state = inject(state, upd.delta);
  return {out_state, reset(upd)};
}

namespace detail {

inline Vec18 boxminus(const NominalState& x, const NominalState& x0) {
  Vec18 d;
  d.segment<3>(kIdxP) = x.p - x0.p;
  d.segment<3>(kIdxV) = x.v - x0.v;
  d.segment<3>(kIdxTheta) = log_so3(x0.R.transpose() * x.R);
  d.segment<3>(kIdxBg) = x.bg - x0.bg;
  d.segment<3>(kIdxBa) = x.ba - x0.ba;
  d.segment<3>(kIdxG) = x.g - x0.g;
  return d;
}

}  // namespace detail

// Iterated tightly-coupled update. Each sweep re-linearizes the per-point SDF
// residuals at the current state and solves the 18-dim Woodbury system
// against the frame-start prior; the covariance committed at the end is the
// posterior of the last linearization.
inline std::tuple<NominalState, ErrorBelief, RegistrationResult> update_tight(
    const std::vector<Vec3>& points, const NominalState& state,
    const ErrorBelief& belief, const NeuralMap& map,
    const MeasurementNoise& noise, const TightLimits& limits = {}) {
  if (map.empty()) throw std::invalid_argument("update_tight: empty map");
  noise.validate();

  RegistrationResult res;
  res.pose = state.pose();

  NominalState x = state;
  ErrorBelief upd = belief;
  Vec18 total = Vec18::Zero();
  bool any_update = false;

  for (int it = 0; it < limits.max_iterations; ++it) {
    res.iterations = it + 1;
    const detail::FieldRows rows = detail::sample_field(points, x.pose(), map);
    const Eigen::Index m = rows.sdf.size();
    if (it == 0) res.inlier_count = int(m);
    if (m < limits.min_valid) {
      if (it == 0) {
        res.converged = false;  // degraded: too little field support
        return {state, belief, res};
      }
      break;
    }

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, kErrorDim);
    Eigen::VectorXd v_diag(m);
    const double s2 = noise.sigma_sdf * noise.sigma_sdf;
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vec3 g = rows.grad.col(i);
      const Vec3 pb = points[rows.idx[size_t(i)]];
      H.block<1, 3>(i, kIdxP) = g.transpose();
      H.block<1, 3>(i, kIdxTheta) = -g.transpose() * x.R * hat(pb);
      v_diag[i] = s2 / std::max(robust_weight(rows.sdf[i], limits.kernel_scale), 1e-3);
    }
    const Vec18 dx = detail::boxminus(x, state);
    const Eigen::VectorXd resid_eff = -rows.sdf + H * dx;

    int solved_dim = 0;
    upd = woodbury_update(belief, H, resid_eff, v_diag, &solved_dim);
    res.final_cost = rows.sdf.squaredNorm() / double(m);
    any_update = true;

    const Vec18 step = upd.delta - dx;
    total = upd.delta;
    x = inject(state, total);
    if (step.norm() < limits.eps_conv) {
      res.converged = true;
      break;
    }
  }

  if (!any_update) return {state, belief, res};
  if (!res.converged) res.converged = true;  // budget exhausted but updated

  res.pose = x.pose();
  ErrorBelief committed;
  committed.delta = total;
  committed.P = upd.P;
  ErrorBelief out = reset(committed);
  res.pose_covariance.topLeftCorner<3, 3>() = out.P.block<3, 3>(kIdxP, kIdxP);
  res.pose_covariance.bottomRightCorner<3, 3>() = out.P.block<3, 3>(kIdxTheta, kIdxTheta);
  res.pose_covariance.topRightCorner<3, 3>() = out.P.block<3, 3>(kIdxP, kIdxTheta);
  res.pose_covariance.bottomLeftCorner<3, 3>() = out.P.block<3, 3>(kIdxTheta, kIdxP);
  return {x, out, res};
}

}  // namespace knlio
