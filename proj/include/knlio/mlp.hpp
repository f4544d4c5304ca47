#pragma once

// Small fixed-shape MLP that decodes an interpolated map feature (plus an
// optional aggregated-offset channel) into a scalar signed distance.
// Forward and backward passes are hand-written; backward returns exact
// gradients for every parameter and for the input vector.

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <stdexcept>

namespace knlio {

enum class Activation { kSilu, kIdentity };

namespace detail {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace detail

inline double activate(double x, Activation a) {
  return a == Activation::kSilu ? x * detail::sigmoid(x) : x;
}

inline double activate_deriv(double x, Activation a) {
  if (a == Activation::kIdentity) return 1.0;
  const double s = detail::sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

struct DecoderGrads {
  Eigen::MatrixXd w1, w2;
  Eigen::VectorXd b1, b2, w3;
  double b3 = 0.0;
  Eigen::MatrixXd input;  // in_dim x batch

  void setZero() {
    w1.setZero(); w2.setZero(); b1.setZero(); b2.setZero();
    w3.setZero(); b3 = 0.0; input.setZero();
  }
};

class SdfDecoder {
 public:
  SdfDecoder() = default;
  SdfDecoder(int in_dim, int hidden, Activation act, uint64_t seed)
      : in_dim_(in_dim), hidden_(hidden), act_(act) {
    std::mt19937_64 rng(seed);
    auto xavier = [&](Eigen::MatrixXd& m, int fan_in, int fan_out) {
      const double a = std::sqrt(6.0 / double(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-a, a);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    };
    w1_.resize(hidden, in_dim);
    w2_.resize(hidden, hidden);
    xavier(w1_, in_dim, hidden);
    xavier(w2_, hidden, hidden);
    b1_ = Eigen::VectorXd::Zero(hidden);
    b2_ = Eigen::VectorXd::Zero(hidden);
    w3_ = Eigen::VectorXd::Zero(hidden);
    Eigen::MatrixXd w3m(1, hidden);
    xavier(w3m, hidden, 1);
    w3_ = w3m.transpose();
    b3_ = 0.0;
  }

  int in_dim() const { return in_dim_; }
  int hidden() const { return hidden_; }
  Activation activation() const { return act_; }

  // The sigmoid is evaluated once per layer with Eigen's vectorized exp;
  // both the SiLU value (z*s) and its derivative (s*(1+z*(1-s))) reuse it.
  // Single-sample paths keep mutable scratch, so none of this is thread-safe.
  double forward(const Eigen::VectorXd& x) const {
    check_dim(x.size());
    layers_single(x);
    return w3_.dot(q_a2_) + b3_;
  }

  // Value and d(output)/d(input) for a single sample.
  double forward_with_input_grad(const Eigen::VectorXd& x,
                                 Eigen::VectorXd& dxdp) const {
    check_dim(x.size());
    layers_single(x);
    const double out = w3_.dot(q_a2_) + b3_;
    if (act_ == Activation::kSilu) {
      q_d2_ = w3_.array() * (q_s2_.array() * (1.0 + q_z2_.array() * (1.0 - q_s2_.array())));
      q_d1_.noalias() = w2_.transpose() * q_d2_;
      q_d1_.array() *= q_s1_.array() * (1.0 + q_z1_.array() * (1.0 - q_s1_.array()));
    } else {
      q_d2_ = w3_;
      q_d1_.noalias() = w2_.transpose() * q_d2_;
    }
    dxdp.noalias() = w1_.transpose() * q_d1_;
    return out;
  }

  // Batched forward; X is in_dim x batch. Caches are kept for backward.
  Eigen::RowVectorXd forward_batch(const Eigen::MatrixXd& X) {
    check_dim(X.rows());
    x_cache_ = X;
    z1_.noalias() = w1_ * X;
    z1_.colwise() += b1_;
    if (act_ == Activation::kSilu) {
      s1_ = (1.0 / (1.0 + (-z1_.array()).exp())).matrix();
      a1_ = z1_.cwiseProduct(s1_);
    } else {
      a1_ = z1_;
    }
    z2_.noalias() = w2_ * a1_;
    z2_.colwise() += b2_;
    if (act_ == Activation::kSilu) {
      s2_ = (1.0 / (1.0 + (-z2_.array()).exp())).matrix();
      a2_ = z2_.cwiseProduct(s2_);
    } else {
      a2_ = z2_;
    }
    return (w3_.transpose() * a2_).array() + b3_;
  }

  // Backward through the cached batch; dout is d(loss)/d(output) per column.
  DecoderGrads backward_batch(const Eigen::RowVectorXd& dout) const {
    if (dout.cols() != a2_.cols()) {
      throw std::invalid_argument("SdfDecoder: backward batch size mismatch");
    }
    DecoderGrads g;
    Eigen::MatrixXd d2 = w3_ * dout;
    if (act_ == Activation::kSilu) {
      d2.array() *= s2_.array() * (1.0 + z2_.array() * (1.0 - s2_.array()));
    }
    Eigen::MatrixXd d1 = w2_.transpose() * d2;
    if (act_ == Activation::kSilu) {
      d1.array() *= s1_.array() * (1.0 + z1_.array() * (1.0 - s1_.array()));
    }
    g.w3 = a2_ * dout.transpose();
    g.b3 = dout.sum();
    g.w2 = d2 * a1_.transpose();
    g.b2 = d2.rowwise().sum();
    g.w1 = d1 * x_cache_.transpose();
    g.b1 = d1.rowwise().sum();
    g.input = w1_.transpose() * d1;
    return g;
  }

  Eigen::MatrixXd& w1() { return w1_; }
  Eigen::MatrixXd& w2() { return w2_; }
  Eigen::VectorXd& b1() { return b1_; }
  Eigen::VectorXd& b2() { return b2_; }
  Eigen::VectorXd& w3() { return w3_; }
  double& b3() { return b3_; }
  const Eigen::MatrixXd& w1() const { return w1_; }
  const Eigen::MatrixXd& w2() const { return w2_; }
  const Eigen::VectorXd& b1() const { return b1_; }
  const Eigen::VectorXd& b2() const { return b2_; }
  const Eigen::VectorXd& w3() const { return w3_; }
  double b3() const { return b3_; }

  void set_shape(int in_dim, int hidden, Activation act) {
    in_dim_ = in_dim;
    hidden_ = hidden;
    act_ = act;
  }

 private:
  void check_dim(Eigen::Index d) const {
    if (d != in_dim_) throw std::invalid_argument("SdfDecoder: input dimension mismatch");
  }
  void layers_single(const Eigen::VectorXd& x) const {
    q_z1_.noalias() = w1_ * x;
    q_z1_ += b1_;
    if (act_ == Activation::kSilu) {
      q_s1_ = (1.0 / (1.0 + (-q_z1_.array()).exp())).matrix();
      q_a1_ = q_z1_.cwiseProduct(q_s1_);
    } else {
      q_a1_ = q_z1_;
    }
    q_z2_.noalias() = w2_ * q_a1_;
    q_z2_ += b2_;
    if (act_ == Activation::kSilu) {
      q_s2_ = (1.0 / (1.0 + (-q_z2_.array()).exp())).matrix();
      q_a2_ = q_z2_.cwiseProduct(q_s2_);
    } else {
      q_a2_ = q_z2_;
    }
  }

  int in_dim_ = 0, hidden_ = 0;
  Activation act_ = Activation::kSilu;
  Eigen::MatrixXd w1_, w2_;
  Eigen::VectorXd b1_, b2_, w3_;
  double b3_ = 0.0;

  // batch caches
  Eigen::MatrixXd x_cache_, z1_, s1_, a1_, z2_, s2_, a2_;
  // single-sample scratch
  mutable Eigen::VectorXd q_z1_, q_s1_, q_a1_, q_z2_, q_s2_, q_a2_, q_d1_, q_d2_;
};

// Adam with per-tensor moments; features use an element-wise variant below.
class AdamState {
 public:
  void step(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::MatrixXd& grad,
            double lr) {
    if (m_.size() == 0) {
      m_ = Eigen::MatrixXd::Zero(param.rows(), param.cols());
      v_ = Eigen::MatrixXd::Zero(param.rows(), param.cols());
    }
    ++t_;
    m_ = kBeta1 * m_ + (1.0 - kBeta1) * grad;
    v_ = kBeta2 * v_.array().matrix() + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    param.array() -=
        lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + kEps);
  }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  Eigen::MatrixXd m_, v_;
  int t_ = 0;
};

}  // namespace knlio
