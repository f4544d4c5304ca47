#pragma once

// Error-state Kalman filter on SO(3) x R^15: nominal propagation from IMU
// readings, 18-state error covariance propagation, generic / Woodbury-form
// updates, injection and covariance reset, and static initialization.
//
// Error-state ordering: [dp, dv, dtheta, dbg, dba, dg], 3 each.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "knlio/geometry.hpp"

namespace knlio {

inline constexpr int kIdxP = 0;
inline constexpr int kIdxV = 3;
inline constexpr int kIdxTheta = 6;
inline constexpr int kIdxBg = 9;
inline constexpr int kIdxBa = 12;
inline constexpr int kIdxG = 15;
inline constexpr int kErrorDim = 18;

struct ImuSample {
  double t = 0.0;   // seconds
  Vec3 omega = Vec3::Zero();  // rad/s, body
  Vec3 accel = Vec3::Zero();  // m/s^2, body

  bool finite() const { return std::isfinite(t) && omega.allFinite() && accel.allFinite(); }
};

struct NoiseConfig {
  double sigma_a = 5e-3;    // accel white noise density, m/s^2 * sqrt(s)
  double sigma_g = 5e-4;    // gyro white noise density, rad/s * sqrt(s)
  double sigma_ba = 1e-4;   // accel bias random walk density
  double sigma_bg = 1e-5;   // gyro bias random walk density
  double gravity_magnitude = 9.81;  // m/s^2

  void validate() const {
    if (sigma_a <= 0 || sigma_g <= 0 || sigma_ba <= 0 || sigma_bg <= 0 ||
        gravity_magnitude <= 0) {
      throw std::invalid_argument("NoiseConfig: all entries must be positive");
    }
  }
};

struct NominalState {
  Vec3 p = Vec3::Zero();    // m, world
  Vec3 v = Vec3::Zero();    // m/s, world
  Mat3 R = Mat3::Identity();  // body -> world
  Vec3 bg = Vec3::Zero();   // rad/s, body
  Vec3 ba = Vec3::Zero();   // m/s^2, body
  Vec3 g = Vec3(0, 0, -9.81);  // m/s^2, world

  Pose pose() const { return Pose{R, p}; }
};

struct ErrorBelief {
  Vec18 delta = Vec18::Zero();
  Mat18 P = Mat18::Identity();
};

// Discrete error-state transition F and process noise Q over one interval.
inline std::pair<Mat18, Mat18> build_transition(const NominalState& state,
                                                const ImuSample& imu,
                                                double dt,
                                                const NoiseConfig& cfg) {
  if (!(dt > 0.0) || dt > 0.1) {
    throw std::invalid_argument("build_transition: dt must be in (0, 0.1]");
  }
  if (!imu.finite()) {
    throw std::invalid_argument("build_transition: non-finite IMU sample");
  }
  const Vec3 acc_b = imu.accel - state.ba;
  const Vec3 omg_b = imu.omega - state.bg;

  Mat18 F = Mat18::Identity();
  F.block<3, 3>(kIdxP, kIdxV) = dt * Mat3::Identity();
  F.block<3, 3>(kIdxV, kIdxTheta) = -state.R * hat(acc_b) * dt;
  F.block<3, 3>(kIdxV, kIdxBa) = -state.R * dt;
  F.block<3, 3>(kIdxV, kIdxG) = dt * Mat3::Identity();
  F.block<3, 3>(kIdxTheta, kIdxTheta) = exp_so3(-omg_b * dt);
  F.block<3, 3>(kIdxTheta, kIdxBg) = -dt * Mat3::Identity();

  Mat18 Q = Mat18::Zero();
  Q.block<3, 3>(kIdxV, kIdxV) = cfg.sigma_a * cfg.sigma_a * dt * Mat3::Identity();
  Q.block<3, 3>(kIdxTheta, kIdxTheta) = cfg.sigma_g * cfg.sigma_g * dt * Mat3::Identity();
  Q.block<3, 3>(kIdxBg, kIdxBg) = cfg.sigma_bg * cfg.sigma_bg * dt * Mat3::Identity();
  Q.block<3, 3>(kIdxBa, kIdxBa) = cfg.sigma_ba * cfg.sigma_ba * dt * Mat3::Identity();
  return {F, Q};
}

// One propagation step. The nominal state advances with the discrete
// kinematics (v_dot = +R(a - ba) + g); the covariance by P <- F P F^T + Q.
inline std::pair<NominalState, ErrorBelief> propagate(const NominalState& state,
                                                      const ErrorBelief& belief,
                                                      const ImuSample& imu,
                                                      double dt,
                                                      const NoiseConfig& cfg) {
  if (belief.delta.norm() > 1e-12) {
    throw std::invalid_argument("propagate: error state must be reset to zero");
  }
  auto [F, Q] = build_transition(state, imu, dt, cfg);

  const Vec3 acc_w = state.R * (imu.accel - state.ba);
  NominalState next = state;
  next.p = state.p + state.v * dt + 0.5 * (acc_w + state.g) * dt * dt;
  next.v = state.v + (acc_w + state.g) * dt;
  next.R = state.R * exp_so3((imu.omega - state.bg) * dt);

  ErrorBelief out = belief;
  out.P = F * belief.P * F.transpose() + Q;
  out.P = 0.5 * (out.P + out.P.transpose());
  return {next, out};
}

// Standard EKF update: K = P H^T (H P H^T + V)^{-1}. `solved_dim_out`, when
// given, reports the dimension of the linear system that was inverted.
inline ErrorBelief kalman_update(const ErrorBelief& belief,
                                 const Eigen::MatrixXd& H,
                                 const Eigen::VectorXd& residual,
                                 const Eigen::MatrixXd& V,
                                 int* solved_dim_out = nullptr) {
  const auto m = H.rows();
  if (H.cols() != kErrorDim || residual.size() != m || V.rows() != m || V.cols() != m) {
    throw std::invalid_argument("kalman_update: dimension mismatch");
  }
  const Eigen::MatrixXd S = H * belief.P * H.transpose() + V;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any()) {
    throw std::runtime_error("kalman_update: singular innovation matrix");
  }
  const Eigen::MatrixXd K = belief.P * H.transpose() * ldlt.solve(Eigen::MatrixXd::Identity(m, m));
  if (solved_dim_out) *solved_dim_out = int(m);

  ErrorBelief out;
  out.delta = K * residual;
  out.P = (Mat18::Identity() - K * H) * belief.P;
  out.P = 0.5 * (out.P + out.P.transpose());
  return out;
}

// Same contract as kalman_update for diagonal V, but via the Woodbury
// identity K = (P^{-1} + H^T V^{-1} H)^{-1} H^T V^{-1}: only 18x18 systems
// are ever inverted, independent of the number of measurement rows.
inline ErrorBelief woodbury_update(const ErrorBelief& belief,
                                   const Eigen::MatrixXd& H,
                                   const Eigen::VectorXd& residual,
                                   const Eigen::VectorXd& v_diag,
                                   int* solved_dim_out = nullptr) {
  const auto m = H.rows();
  if (H.cols() != kErrorDim || residual.size() != m || v_diag.size() != m) {
    throw std::invalid_argument("woodbury_update: dimension mismatch");
  }
  if ((v_diag.array() <= 0.0).any()) {
    throw std::invalid_argument("woodbury_update: V must be positive diagonal");
  }

  auto invert18 = [](const Mat18& M, Mat18& out) {
    Eigen::LDLT<Mat18> ldlt(M);
    if (ldlt.info() != Eigen::Success) return false;
    out = ldlt.solve(Mat18::Identity());
    return ((M * out - Mat18::Identity()).norm() < 1e-6) && out.allFinite();
  };

  Mat18 P_inv;
  if (!invert18(belief.P, P_inv)) {
    Mat18 P_reg = belief.P + 1e-12 * Mat18::Identity();
    if (!invert18(P_reg, P_inv)) {
      throw std::runtime_error("woodbury_update: covariance numerically singular");
    }
  }

  const Eigen::MatrixXd Ht_Vinv = H.transpose() * v_diag.cwiseInverse().asDiagonal();
  const Mat18 A = P_inv + Ht_Vinv * H;
  Mat18 A_inv;
  if (!invert18(A, A_inv)) {
    throw std::runtime_error("woodbury_update: information matrix singular");
  }
  if (solved_dim_out) *solved_dim_out = kErrorDim;

  const Eigen::MatrixXd K = A_inv * Ht_Vinv;
  ErrorBelief out;
  out.delta = K * residual;
  out.P = (Mat18::Identity() - K * H) * belief.P;
  out.P = 0.5 * (out.P + out.P.transpose());
  return out;
}

// x <- x (+) delta: vector parts add, rotation takes a right-multiplicative
// increment R <- R * Exp(dtheta).
inline NominalState inject(const NominalState& state, const Vec18& delta) {
  const Vec3 dtheta = delta.segment<3>(kIdxTheta);
  if (dtheta.norm() >= M_PI) {
    throw std::invalid_argument("inject: rotation increment must be < pi");
  }
  NominalState out = state;
  out.p += delta.segment<3>(kIdxP);
  out.v += delta.segment<3>(kIdxV);
  out.R = state.R * exp_so3(dtheta);
  out.bg += delta.segment<3>(kIdxBg);
  out.ba += delta.segment<3>(kIdxBa);
  out.g += delta.segment<3>(kIdxG);
  return out;
}

// Moves the covariance to the new tangent point after injection and zeroes
// the error state. Only the rotation block is affected.
inline ErrorBelief reset(const ErrorBelief& belief) {
  const Vec3 dtheta = belief.delta.segment<3>(kIdxTheta);
  Mat18 G = Mat18::Identity();
  G.block<3, 3>(kIdxTheta, kIdxTheta) = Mat3::Identity() - 0.5 * hat(dtheta);
  ErrorBelief out;
  out.delta.setZero();
  out.P = G * belief.P * G.transpose();
  out.P = 0.5 * (out.P + out.P.transpose());
  return out;
}

struct InitialPriors {
  double sigma_p0 = 1e-4;      // m; the origin is defined here
  double sigma_v0 = 1e-3;      // m/s
  double sigma_theta0 = 1e-3;  // rad
  double sigma_bg0 = 1e-3;     // rad/s
  double sigma_ba0 = 1e-2;     // m/s^2
  double sigma_g0 = 1e-2;      // m/s^2
  double accel_var_threshold = 0.05;  // (m/s^2)^2, static-window gate
  int min_samples = 50;
};

// Static initialization: attitude from the mean specific-force direction,
// accelerometer bias from the known gravity magnitude, gyro bias from the
// mean rate. Yaw is unobservable and fixed to zero.
inline std::pair<NominalState, ErrorBelief> init_from_static(
    std::span<const ImuSample> samples,
    const NoiseConfig& cfg,
    const InitialPriors& priors = {}) {
  cfg.validate();
  if (int(samples.size()) < priors.min_samples) {
    throw std::invalid_argument("init_from_static: not enough IMU samples");
  }
  Vec3 mean_a = Vec3::Zero(), mean_w = Vec3::Zero();
  for (const auto& s : samples) {
    if (!s.finite()) throw std::invalid_argument("init_from_static: non-finite sample");
    mean_a += s.accel;
    mean_w += s.omega;
  }
  mean_a /= double(samples.size());
  mean_w /= double(samples.size());

  double accel_var = 0.0;
  for (const auto& s : samples) accel_var += (s.accel - mean_a).squaredNorm();
  accel_var /= double(samples.size());
  if (accel_var > priors.accel_var_threshold) {
    throw std::runtime_error(
        "init_from_static: excessive motion during window, accel variance " +
        std::to_string(accel_var));
  }

  NominalState state;
  state.g = Vec3(0, 0, -cfg.gravity_magnitude);
  state.R = rotation_between(mean_a.normalized(), Vec3::UnitZ());
  state.ba = mean_a + state.R.transpose() * state.g;
  state.bg = mean_w;

  ErrorBelief belief;
  Vec18 d;
  d.segment<3>(kIdxP).setConstant(priors.sigma_p0 * priors.sigma_p0);
  d.segment<3>(kIdxV).setConstant(priors.sigma_v0 * priors.sigma_v0);
  d.segment<3>(kIdxTheta).setConstant(priors.sigma_theta0 * priors.sigma_theta0);
  d.segment<3>(kIdxBg).setConstant(priors.sigma_bg0 * priors.sigma_bg0);
  d.segment<3>(kIdxBa).setConstant(priors.sigma_ba0 * priors.sigma_ba0);
  d.segment<3>(kIdxG).setConstant(priors.sigma_g0 * priors.sigma_g0);
  belief.P = d.asDiagonal();
  return {state, belief};
}

// Propagates across a time-sorted sample span, one step per consecutive pair
// using the average of the boundary readings. Appends (t, pose) to
// `trajectory_out` if given, including the initial instant.
inline std::pair<NominalState, ErrorBelief> propagate_span(
    NominalState state, ErrorBelief belief,
    std::span<const ImuSample> samples, const NoiseConfig& cfg,
    std::vector<std::pair<double, Pose>>* trajectory_out = nullptr) {
  if (samples.size() < 2) {
    if (trajectory_out && !samples.empty()) {
      trajectory_out->emplace_back(samples.front().t, state.pose());
    }
    return {state, belief};
  }
  if (trajectory_out) trajectory_out->emplace_back(samples.front().t, state.pose());
  for (size_t k = 0; k + 1 < samples.size(); ++k) {
    double dt = samples[k + 1].t - samples[k].t;
    if (dt < 0.0) throw std::invalid_argument("propagate_span: samples not time-sorted");
    if (dt == 0.0) continue;
    ImuSample mid;
    mid.t = 0.5 * (samples[k].t + samples[k + 1].t);
    mid.omega = 0.5 * (samples[k].omega + samples[k + 1].omega);
    mid.accel = 0.5 * (samples[k].accel + samples[k + 1].accel);
    // Long gaps are split so each step respects the dt contract.
    int n_sub = std::max(1, int(std::ceil(dt / 0.1)));
    for (int s = 0; s < n_sub; ++s) {
      std::tie(state, belief) = propagate(state, belief, mid, dt / n_sub, cfg);
    }
    if (trajectory_out) trajectory_out->emplace_back(samples[k + 1].t, state.pose());
  }
  return {state, belief};
}

}  // namespace knlio
