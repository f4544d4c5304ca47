#include "knlio/training.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace knlio;

namespace {

// flat grid on z = 0 observed from above
std::vector<Vec3> plane_grid(int half, double step) {
  std::vector<Vec3> pts;
  for (int i = -half; i <= half; ++i) {
    for (int j = -half; j <= half; ++j) {
      pts.emplace_back(i * step, j * step, 0.0);
    }
  }
  return pts;
}

double map_loss(const NeuralMap& map, const std::vector<TrainingSample>& samples) {
  const double sigma = map.config().truncation / 3.0;
  double loss = 0.0;
  int n = 0;
  for (const auto& s : samples) {
    const auto nb = map.neighbors(s.position);
    if (int(nb.size()) < map.config().k_min) continue;
    const Eigen::VectorXd u = map.decoder_input(s.position, nb);
    const double z = map.decoder().forward(u);
    const double y = 1.0 / (1.0 + std::exp(-s.label_sdf / sigma));
    loss += bce_with_logits(z / sigma, y);
    ++n;
  }
  return n > 0 ? loss / n : 0.0;
}

}  // namespace

TEST(Training, SampleLabelsAndCounts) {
  std::mt19937_64 rng(5);
  const Vec3 origin(0, 0, 0);
  const std::vector<Vec3> frame{Vec3(2, 0, 0), Vec3(0, 3, 0)};
  const double trunc = 0.3;
  const auto samples = sample_training_points(frame, origin, trunc, 3, 2, rng);
  ASSERT_EQ(samples.size(), frame.size() * (1 + 3 + 2));

  for (const auto& s : samples) {
    switch (s.kind) {
      case SampleKind::kSurface: {
        EXPECT_EQ(s.label_sdf, 0.0);
        bool on_surface = false;
        for (const auto& p : frame) on_surface |= (s.position - p).norm() < 1e-12;
        EXPECT_TRUE(on_surface);
        break;
      }
      case SampleKind::kFree: {
        EXPECT_GT(s.label_sdf, 0.0);
        EXPECT_LE(s.label_sdf, trunc);
        // label is distance to the endpoint along the ray, clamped
        const double t = s.position.norm();
        double range = 0.0;
        for (const auto& p : frame) {
          if (s.position.normalized().dot(p.normalized()) > 0.999) range = p.norm();
        }
        ASSERT_GT(range, 0.0);
        EXPECT_LE(t, range + 1e-12);
        EXPECT_NEAR(s.label_sdf, std::min(range - t, trunc), 1e-12);
        break;
      }
      case SampleKind::kBehind: {
        EXPECT_LT(s.label_sdf, 0.0);
        EXPECT_GE(s.label_sdf, -trunc);
        EXPECT_GT(s.position.norm(), 1.99);  // beyond an endpoint
        break;
      }
    }
  }
}

TEST(Training, SampleSkipsDegenerateRays) {
  std::mt19937_64 rng(6);
  const std::vector<Vec3> frame{Vec3::Zero(),  // zero range
                                Vec3(std::numeric_limits<double>::quiet_NaN(), 1, 0),
                                Vec3(1, 0, 0)};
  const auto samples = sample_training_points(frame, Vec3::Zero(), 0.3, 2, 1, rng);
  EXPECT_EQ(samples.size(), 4u);  // only the finite, nonzero ray
  EXPECT_THROW(sample_training_points(frame, Vec3::Zero(), 0.0, 1, 1, rng),
               std::invalid_argument);
}

TEST(Training, BceMatchesNaiveForm) {
  auto naive = [](double a, double y) {
    const double p = 1.0 / (1.0 + std::exp(-a));
    return -y * std::log(p) - (1.0 - y) * std::log(1.0 - p);
  };
  for (double a : {-4.0, -1.0, 0.0, 0.5, 3.0}) {
    for (double y : {0.0, 0.3, 0.5, 1.0}) {
      EXPECT_NEAR(bce_with_logits(a, y), naive(a, y), 1e-12);
    }
  }
  // stable far outside the naive form's range
  EXPECT_TRUE(std::isfinite(bce_with_logits(500.0, 0.0)));
  EXPECT_TRUE(std::isfinite(bce_with_logits(-500.0, 1.0)));
  EXPECT_NEAR(bce_with_logits(500.0, 1.0), 0.0, 1e-12);
}

TEST(Training, ZeroItersChangesNothing) {
  NeuralMap map;
  map.insert_frame(plane_grid(4, 0.1), 0);
  const Eigen::MatrixXd w1 = map.decoder().w1();
  std::mt19937_64 rng(1);
  auto samples = sample_training_points(plane_grid(4, 0.1), Vec3(0, 0, 2), 0.3, 3, 1, rng);
  TrainingConfig cfg;
  cfg.iters = 0;
  const auto trace = optimize_local_map(map, samples, cfg);
  EXPECT_TRUE(trace.empty());
  EXPECT_EQ((map.decoder().w1() - w1).norm(), 0.0);
  for (size_t i = 0; i < map.size(); ++i) EXPECT_EQ(map.feature(i).norm(), 0.0);
}

// Adam's first step is -lr * sign(gradient) elementwise, which lets finite
// differences of the loss check the sign of every scattered feature gradient.
TEST(Training, FirstStepMatchesGradientSign)
{
  MapConfig mc;
  mc.k_min = 3;
  NeuralMap map(mc);
  map.insert_frame(plane_grid(3, 0.12), 0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 0.3);
  for (size_t i = 0; i < map.size(); ++i) {
    for (int j = 0; j < mc.feature_dim; ++j) map.feature(i)[j] = n(rng);
  }
  auto samples = sample_training_points(plane_grid(3, 0.12), Vec3(0, 0, 1.5), 0.3, 2, 1, rng);

  std::vector<Eigen::VectorXd> before(map.size());
  for (size_t i = 0; i < map.size(); ++i) before[i] = map.feature(i);

  TrainingConfig cfg;
  cfg.iters = 1;
  cfg.lr = 1e-4;
  cfg.batch_size = 1 << 20;  // full batch: deterministic gradient
  optimize_local_map(map, samples, cfg);

  // restore, probe by finite differences, compare signs
  std::vector<Eigen::VectorXd> after(map.size());
  for (size_t i = 0; i < map.size(); ++i) {
    after[i] = map.feature(i);
    map.feature(i) = before[i];
  }
  const double eps = 1e-6;
  int checked = 0;
  for (size_t i = 0; i < map.size() && checked < 40; i += 7) {
    for (int j = 0; j < mc.feature_dim && checked < 40; j += 3) {
      map.feature(i)[j] = before[i][j] + eps;
      const double lp = map_loss(map, samples);
      map.feature(i)[j] = before[i][j] - eps;
      const double lm = map_loss(map, samples);
      map.feature(i)[j] = before[i][j];
      const double fd = (lp - lm) / (2 * eps);
      const double step = after[i][j] - before[i][j];
      if (std::abs(fd) < 1e-7) continue;  // sign unreliable at machine noise
      EXPECT_LT(step * fd, 0.0) << "feature " << i << "[" << j << "]";
      EXPECT_NEAR(std::abs(step), cfg.lr, 0.2 * cfg.lr);
      ++checked;
    }
  }
  EXPECT_GE(checked, 10);
}

TEST(Training, PlaneFieldConverges) {
  MapConfig mc;
  NeuralMap map(mc);
  const auto surface = plane_grid(10, 0.1);
  map.insert_frame(surface, 0);

  std::mt19937_64 rng(2);
  auto samples = sample_training_points(surface, Vec3(0, 0, 2), mc.truncation, 3, 1, rng);
  TrainingConfig cfg;
  cfg.iters = 300;
  cfg.batch_size = 4096;
  const auto trace = optimize_local_map(map, samples, cfg);
  ASSERT_EQ(trace.size(), 300u);

  // soft labels put an entropy floor under the BCE; progress is measured on
  // the excess above it (surface targets y = 0.5 alone contribute log 2)
  const double sigma = mc.truncation / 3.0;
  double floor = 0.0;
  for (const auto& s : samples) {
    const double y = 1.0 / (1.0 + std::exp(-s.label_sdf / sigma));
    floor += bce_with_logits(std::log(y / (1.0 - y)), y);
  }
  floor /= double(samples.size());
  // interpolation ambiguity keeps a bias floor above the entropy floor, so
  // only a coarse decrease is asserted; the field checks below are the
  // real contract
  EXPECT_LT(trace.back() - floor, 0.7 * (trace.front() - floor));

  // zero level sits on the plane, positive above, negative below
  double mean_abs = 0.0;
  int n = 0;
  for (double x : {-0.5, -0.2, 0.1, 0.4}) {
    for (double y : {-0.4, 0.0, 0.3}) {
      const FieldSample s = map.query_sdf(Vec3(x, y, 0.0));
      ASSERT_TRUE(s.valid);
      mean_abs += std::abs(s.sdf);
      ++n;
      const FieldSample above = map.query_sdf(Vec3(x, y, 0.12));
      const FieldSample below = map.query_sdf(Vec3(x, y, -0.12));
      ASSERT_TRUE(above.valid && below.valid);
      EXPECT_GT(above.sdf, s.sdf);
      EXPECT_LT(below.sdf, s.sdf);
    }
  }
  EXPECT_LT(mean_abs / n, 0.1 * mc.truncation);
}

TEST(Training, WindowAndWarmupGating) {
  MapConfig mc;
  mc.local_window_frames = 100;
  mc.decoder_warmup_frames = 30;
  NeuralMap map(mc);
  map.insert_frame(plane_grid(4, 0.15), 0);  // old points
  std::vector<Vec3> recent;
  for (auto p : plane_grid(4, 0.15)) recent.push_back(p + Vec3(0, 0, 1.0));
  map.insert_frame(recent, 200);  // latest frame 200: old points fall outside window

  const size_t n_old = map.size() - recent.size();
  std::mt19937_64 rng(3);
  std::vector<Vec3> all = plane_grid(4, 0.15);
  all.insert(all.end(), recent.begin(), recent.end());
  auto samples = sample_training_points(all, Vec3(0, 0, 3), mc.truncation, 2, 1, rng);

  const Eigen::MatrixXd w1 = map.decoder().w1();
  TrainingConfig cfg;
  cfg.iters = 10;
  optimize_local_map(map, samples, cfg);

  // decoder frozen past warm-up, features frozen outside the window
  EXPECT_EQ((map.decoder().w1() - w1).norm(), 0.0);
  for (size_t i = 0; i < n_old; ++i) {
    EXPECT_EQ(map.feature(i).norm(), 0.0) << "stale feature " << i << " moved";
  }
  double recent_motion = 0.0;
  for (size_t i = n_old; i < map.size(); ++i) recent_motion += map.feature(i).norm();
  EXPECT_GT(recent_motion, 0.0);
}

TEST(Training, DivergenceGuardStops) {
  NeuralMap map;
  map.insert_frame(plane_grid(6, 0.1), 0);
  std::mt19937_64 rng(4);
  auto samples = sample_training_points(plane_grid(6, 0.1), Vec3(0, 0, 2), 0.3, 3, 1, rng);
  TrainingConfig cfg;
  cfg.iters = 200;
  cfg.lr = 50.0;  // absurd rate to force blow-up
  cfg.divergence_factor = 1.5;
  const auto trace = optimize_local_map(map, samples, cfg);
  EXPECT_LT(trace.size(), 200u);
}
