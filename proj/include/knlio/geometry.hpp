#pragma once

// Rotation-group and rigid-transform primitives shared by all modules.
// Rotations are 3x3 matrices throughout; axis-angle vectors are used as the
// tangent-space parameterization, with Exp/Log converting between the two.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace knlio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec18 = Eigen::Matrix<double, 18, 1>;
using Mat18 = Eigen::Matrix<double, 18, 18>;

// Below this angle all closed forms switch to their Taylor expansions.
inline constexpr double kSmallAngle = 1e-6;

inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

inline Vec3 vee(const Mat3& m) {
  return Vec3(m(2, 1), m(0, 2), m(1, 0));
}

inline bool is_rotation(const Mat3& R, double tol = 1e-6) {
  return (R.transpose() * R - Mat3::Identity()).norm() < tol &&
         R.determinant() > 0.0;
}

// Rodrigues formula, 4th-order series below kSmallAngle.
inline Mat3 exp_so3(const Vec3& theta) {
  const double ang = theta.norm();
  const Mat3 K = hat(theta);
  double a, b;  // R = I + a*K + b*K^2
  if (ang < kSmallAngle) {
    const double ang2 = ang * ang;
    a = 1.0 - ang2 / 6.0 + ang2 * ang2 / 120.0;
    b = 0.5 - ang2 / 24.0 + ang2 * ang2 / 720.0;
  } else {
    a = std::sin(ang) / ang;
    b = (1.0 - std::cos(ang)) / (ang * ang);
  }
  return Mat3::Identity() + a * K + b * K * K;
}

// Inverse of exp_so3 with ||result|| <= pi. The branch near pi extracts the
// axis from the largest diagonal element of the symmetric part, where the
// antisymmetric part vanishes.
inline Vec3 log_so3(const Mat3& R) {
  if (!is_rotation(R)) {
    throw std::invalid_argument("log_so3: input is not a rotation matrix");
  }
  const double tr = R.trace();
  const double cos_t = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
  const double ang = std::acos(cos_t);
  const Vec3 w = vee(R - R.transpose()) * 0.5;  // = sin(ang) * axis

  if (ang < kSmallAngle) {
    // sin(ang)/ang ~ 1; first-order correction keeps the round trip tight.
    return w * (1.0 + ang * ang / 6.0);
  }
  if (ang > M_PI - 1e-4) {
    const Mat3 S = 0.5 * (R + R.transpose());
    const double c = cos_t;
    Vec3 axis;
    int k = 0;
    S.diagonal().maxCoeff(&k);
    axis[k] = std::sqrt(std::max(0.0, (S(k, k) - c) / (1.0 - c)));
    const int i = (k + 1) % 3, j = (k + 2) % 3;
    axis[i] = S(k, i) / ((1.0 - c) * axis[k]);
    axis[j] = S(k, j) / ((1.0 - c) * axis[k]);
    axis.normalize();
    if (axis.dot(w) < 0.0) axis = -axis;  // w fixes the sign while sin > 0
    return ang * axis;
  }
  return w * (ang / std::sin(ang));
}

// J_r(theta): maps additive tangent increments to right-multiplicative ones,
// d/dt Exp(theta(t)) = Exp(theta) * hat(J_r(theta) * theta_dot).
inline Mat3 right_jacobian(const Vec3& theta) {
  const double ang = theta.norm();
  const Mat3 K = hat(theta);
  double a, b;  // J_r = I - a*K + b*K^2
  if (ang < kSmallAngle) {
    const double ang2 = ang * ang;
    a = 0.5 - ang2 / 24.0 + ang2 * ang2 / 720.0;
    b = 1.0 / 6.0 - ang2 / 120.0 + ang2 * ang2 / 5040.0;
  } else {
    a = (1.0 - std::cos(ang)) / (ang * ang);
    b = (ang - std::sin(ang)) / (ang * ang * ang);
  }
  return Mat3::Identity() - a * K + b * K * K;
}

// Closed-form inverse of J_r, valid for ||theta|| < pi.
inline Mat3 right_jacobian_inv(const Vec3& theta) {
  const double ang = theta.norm();
  const Mat3 K = hat(theta);
  double c;  // J_r^{-1} = I + K/2 + c*K^2
  if (ang < kSmallAngle) {
    const double ang2 = ang * ang;
    c = 1.0 / 12.0 + ang2 / 720.0 + ang2 * ang2 / 30240.0;
  } else {
    c = 1.0 / (ang * ang) -
        (1.0 + std::cos(ang)) / (2.0 * ang * std::sin(ang));
  }
  return Mat3::Identity() + 0.5 * K + c * K * K;
}

// Minimal rotation taking unit vector a onto unit vector b.
inline Mat3 rotation_between(const Vec3& a_unit, const Vec3& b_unit) {
  const double c = std::clamp(a_unit.dot(b_unit), -1.0, 1.0);
  const Vec3 v = a_unit.cross(b_unit);
  if (c < -1.0 + 1e-9) {
    // Antiparallel: rotate by pi about any axis orthogonal to a.
    int k = 0;
    a_unit.cwiseAbs().minCoeff(&k);
    const Vec3 axis = a_unit.cross(Vec3::Unit(k)).normalized();
    return exp_so3(M_PI * axis);
  }
  const Mat3 V = hat(v);
  return Mat3::Identity() + V + V * V * (1.0 / (1.0 + c));
}

struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 operator*(const Vec3& p) const { return R * p + t; }
  Pose operator*(const Pose& other) const {
    return Pose{R * other.R, R * other.t + t};
  }
  Pose inverse() const { return Pose{R.transpose(), -(R.transpose() * t)}; }
};

// Linear translation, geodesic rotation.
inline Pose interpolate_pose(const Pose& a, const Pose& b, double alpha) {
  if (alpha < -1e-12 || alpha > 1.0 + 1e-12) {
    throw std::invalid_argument("interpolate_pose: alpha outside [0,1]");
  }
  alpha = std::clamp(alpha, 0.0, 1.0);
  Pose out;
  out.t = (1.0 - alpha) * a.t + alpha * b.t;
  out.R = a.R * exp_so3(alpha * log_so3(a.R.transpose() * b.R));
  return out;
}

// Least-squares rigid (optionally similarity) alignment minimizing
// sum ||s*R*e_i + t - r_i||^2. Returns the transform taking `estimated`
// onto `reference`.
inline Pose umeyama_align(const std::vector<Vec3>& estimated,
                          const std::vector<Vec3>& reference,
                          double* scale_out = nullptr,
                          bool with_scale = false) {
  const size_t n = estimated.size();
  if (n != reference.size() || n < 3) {
    throw std::invalid_argument("umeyama_align: needs >= 3 paired points");
  }
  Vec3 mean_e = Vec3::Zero(), mean_r = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mean_e += estimated[i];
    mean_r += reference[i];
  }
  mean_e /= double(n);
  mean_r /= double(n);

  Mat3 sigma = Mat3::Zero();
  double var_e = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Vec3 de = estimated[i] - mean_e;
    sigma += (reference[i] - mean_r) * de.transpose();
    var_e += de.squaredNorm();
  }
  sigma /= double(n);
  var_e /= double(n);

  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d = svd.singularValues();
  if (d(1) <= 1e-12 * std::max(1.0, d(0))) {
    throw std::invalid_argument("umeyama_align: degenerate (collinear) points");
  }
  Vec3 s_fix = Vec3::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    s_fix(2) = -1.0;
  }
  const Mat3 R = svd.matrixU() * s_fix.asDiagonal() * svd.matrixV().transpose();
  double scale = 1.0;
  if (with_scale) {
    if (var_e <= 0.0) {
      throw std::invalid_argument("umeyama_align: zero-variance source cloud");
    }
    scale = d.dot(s_fix) / var_e;
  }
  if (scale_out) *scale_out = scale;
  return Pose{R, mean_r - scale * (R * mean_e)};
}

}  // namespace knlio
