#pragma once

// Online map training: turns measured rays into labelled SDF samples and runs
// a few Adam iterations of BCE loss over the local window of neural points.

#include "knlio/neural_map.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>
#include <vector>

namespace knlio {

enum class SampleKind { kSurface, kFree, kBehind };

struct TrainingSample {
  Vec3 position = Vec3::Zero();
  double label_sdf = 0.0;
  double weight = 1.0;
  SampleKind kind = SampleKind::kSurface;
};

struct TrainingConfig {
  int n_free = 3;
  int n_behind = 1;
  int iters = 50;
  double lr = 2e-3;
  int batch_size = 512;
  double divergence_factor = 10.0;
  uint64_t seed = 1;
};

// One surface sample per point plus uniform free-space samples along the ray
// and behind-surface samples past the endpoint. Labels are distances to the
// endpoint, clamped to +/- truncation.
inline std::vector<TrainingSample> sample_training_points(
    const std::vector<Vec3>& frame_world, const Vec3& sensor_origin,
    double truncation, int n_free, int n_behind, std::mt19937_64& rng) {
  if (truncation <= 0.0) throw std::invalid_argument("sample_training_points: truncation must be > 0");
  std::vector<TrainingSample> out;
  out.reserve(frame_world.size() * size_t(1 + n_free + n_behind));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const Vec3& p : frame_world) {
    const Vec3 d = p - sensor_origin;
    const double range = d.norm();
    if (!(range > 1e-9) || !p.allFinite()) continue;
    const Vec3 dir = d / range;

    TrainingSample surf;
    surf.position = p;
    surf.label_sdf = 0.0;
    surf.kind = SampleKind::kSurface;
    out.push_back(surf);

    for (int i = 0; i < n_free; ++i) {
      const double t = unit(rng) * range;
      TrainingSample s;
      s.position = sensor_origin + t * dir;
      s.label_sdf = std::min(range - t, truncation);
      s.kind = SampleKind::kFree;
      out.push_back(s);
    }
    for (int i = 0; i < n_behind; ++i) {
      const double back = unit(rng) * truncation;
      TrainingSample s;
      s.position = p + back * dir;
      s.label_sdf = -std::min(back, truncation);
      s.kind = SampleKind::kBehind;
      out.push_back(s);
    }
  }
  return out;
}

// Numerically stable binary cross entropy with logits; y in [0,1].
inline double bce_with_logits(double a, double y) {
  return std::max(a, 0.0) - a * y + std::log1p(std::exp(-std::abs(a)));
}

namespace detail {

struct SampleBinding {
  std::vector<uint32_t> idx;
  std::vector<double> alpha;
  Eigen::VectorXd offset_part;  // constant part of the decoder input
  double label = 0.0;
  double weight = 1.0;
};

}  // namespace detail

// Runs `cfg.iters` Adam steps of the BCE objective over the given samples.
// Decoder parameters train only during the warm-up frames; features train
// only for points created inside the local window. Returns the loss trace;
// stops early if the loss diverges past cfg.divergence_factor of the start.
inline std::vector<double> optimize_local_map(NeuralMap& map,
                                              const std::vector<TrainingSample>& samples,
                                              const TrainingConfig& cfg = {}) {
  std::vector<double> trace;
  if (cfg.iters <= 0 || samples.empty() || map.empty()) return trace;
  const MapConfig& mc = map.config();
  const int F = mc.feature_dim;
  const double sigma = mc.truncation / 3.0;

  // Bind each usable sample to its neighbor set once; features move during
  // the iterations but neighbor geometry does not.
  std::vector<detail::SampleBinding> bound;
  bound.reserve(samples.size());
  for (const TrainingSample& s : samples) {
    const std::vector<Neighbor> nb = map.neighbors(s.position);
    if (int(nb.size()) < mc.k_min) continue;
    detail::SampleBinding b;
    std::vector<double> alphas;
    Eigen::VectorXd u = map.decoder_input(s.position, nb, &alphas);
    b.offset_part = Eigen::VectorXd::Zero(mc.input_dim());
    if (mc.offset_channel) b.offset_part.tail(3) = u.tail(3);
    b.alpha = std::move(alphas);
    for (const Neighbor& n : nb) b.idx.push_back(uint32_t(n.index));
    b.label = s.label_sdf;
    b.weight = s.weight;
    bound.push_back(std::move(b));
  }
  if (bound.empty()) return trace;

  const bool train_decoder = map.latest_frame() < mc.decoder_warmup_frames;
  const int window_start = map.latest_frame() - mc.local_window_frames + 1;
  auto feature_trainable = [&](uint32_t i) { return map.created_at(i) >= window_start; };

  AdamState opt_w1, opt_b1, opt_w2, opt_b2, opt_w3, opt_b3;
  Eigen::MatrixXd b3m(1, 1);
  struct FeatOpt {
    Eigen::VectorXd m, v;
    int t = 0;
  };
  std::unordered_map<uint32_t, FeatOpt> feat_opt;

  std::mt19937_64 rng(cfg.seed);
  const int B = std::min<int>(cfg.batch_size, int(bound.size()));
  std::uniform_int_distribution<size_t> pick(0, bound.size() - 1);

  Eigen::MatrixXd X(mc.input_dim(), B);
  std::vector<size_t> batch(B);
  // Flat per-point scratch for the gradient scatter; an epoch stamp marks
  // which entries are live this iteration so nothing is reallocated.
  Eigen::MatrixXd fgrad(F, map.size());
  std::vector<uint32_t> fgrad_epoch(map.size(), 0);
  std::vector<uint32_t> touched;
  uint32_t epoch = 0;
  double initial_loss = -1.0;

  for (int it = 0; it < cfg.iters; ++it) {
    const bool full = B == int(bound.size());
    for (int j = 0; j < B; ++j) {
      batch[j] = full ? size_t(j) : pick(rng);
      const detail::SampleBinding& b = bound[batch[j]];
      auto u = X.col(j);
      u = b.offset_part;
      for (size_t i = 0; i < b.idx.size(); ++i) {
        u.head(F) += b.alpha[i] * map.feature(b.idx[i]);
      }
    }
    const Eigen::RowVectorXd z = map.decoder().forward_batch(X);

    double loss = 0.0;
    Eigen::RowVectorXd dout(B);
    for (int j = 0; j < B; ++j) {
      const detail::SampleBinding& b = bound[batch[j]];
      const double a = z[j] / sigma;
      const double y = 1.0 / (1.0 + std::exp(-b.label / sigma));
      loss += b.weight * bce_with_logits(a, y);
      const double p = 1.0 / (1.0 + std::exp(-a));
      dout[j] = b.weight * (p - y) / (sigma * B);
    }
    loss /= B;
    trace.push_back(loss);
    if (initial_loss < 0.0) initial_loss = std::max(loss, 1e-12);
    if (loss > cfg.divergence_factor * initial_loss) break;

    const DecoderGrads g = map.decoder().backward_batch(dout);
    if (train_decoder) {
      opt_w1.step(map.decoder().w1(), g.w1, cfg.lr);
      opt_b1.step(map.decoder().b1(), g.b1, cfg.lr);
      opt_w2.step(map.decoder().w2(), g.w2, cfg.lr);
      opt_b2.step(map.decoder().b2(), g.b2, cfg.lr);
      opt_w3.step(map.decoder().w3(), g.w3, cfg.lr);
      b3m(0, 0) = map.decoder().b3();
      Eigen::MatrixXd gb3(1, 1);
      gb3(0, 0) = g.b3;
      opt_b3.step(b3m, gb3, cfg.lr);
      map.decoder().b3() = b3m(0, 0);
    }

    // Scatter input gradients back to the neighbor features.
    ++epoch;
    touched.clear();
    for (int j = 0; j < B; ++j) {
      const detail::SampleBinding& b = bound[batch[j]];
      const auto gin = g.input.col(j).head(F);
      for (size_t i = 0; i < b.idx.size(); ++i) {
        const uint32_t pi = b.idx[i];
        if (!feature_trainable(pi)) continue;
        if (fgrad_epoch[pi] != epoch) {
          fgrad_epoch[pi] = epoch;
          fgrad.col(pi).setZero();
          touched.push_back(pi);
        }
        fgrad.col(pi) += b.alpha[i] * gin;
      }
    }
    // Stable update order keeps runs bit-identical across platforms.
    std::sort(touched.begin(), touched.end());
    for (const uint32_t pi : touched) {
      const auto gv = fgrad.col(pi);
      FeatOpt& fo = feat_opt[pi];
      if (fo.m.size() == 0) {
        fo.m = Eigen::VectorXd::Zero(F);
        fo.v = Eigen::VectorXd::Zero(F);
      }
      ++fo.t;
      fo.m = AdamState::kBeta1 * fo.m + (1.0 - AdamState::kBeta1) * gv;
      fo.v = AdamState::kBeta2 * fo.v + (1.0 - AdamState::kBeta2) * gv.cwiseProduct(gv);
      const double c1 = 1.0 - std::pow(AdamState::kBeta1, fo.t);
      const double c2 = 1.0 - std::pow(AdamState::kBeta2, fo.t);
      map.feature(pi).array() -=
          cfg.lr * (fo.m.array() / c1) / ((fo.v.array() / c2).sqrt() + AdamState::kEps);
    }
  }
  return trace;
}

}  // namespace knlio
