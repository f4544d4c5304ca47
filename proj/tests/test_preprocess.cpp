#include "knlio/preprocess.hpp"

#include <gtest/gtest.h>

using namespace knlio;

namespace {

SensorRig two_sensor_rig() {
  SensorRig rig;
  rig.main_id = 0;
  rig.extrinsics[0] = Pose{};
  rig.extrinsics[1] = Pose{exp_so3(Vec3(M_PI / 2, 0, 0)), Vec3(0.05, 0.0, 0.12)};
  return rig;
}

LidarPoint make_point(const Vec3& xyz, double t, int source) {
  LidarPoint p;
  p.xyz = xyz;
  p.t = t;
  p.source = source;
  return p;
}

}  // namespace

TEST(Merge, ConcatenatesAndSorts) {
  SensorRig rig;
  rig.main_id = 0;
  rig.extrinsics[0] = Pose{};
  rig.extrinsics[1] = Pose{};  // aux colocated with main

  LidarFrame main;
  main.sensor_id = 0;
  main.t_start = 0.0;
  main.t_end = 0.1;
  main.points = {make_point(Vec3(1, 0, 0), 0.08, 0), make_point(Vec3(2, 0, 0), 0.02, 0)};

  LidarFrame aux;
  aux.sensor_id = 1;
  aux.t_start = 0.0;
  aux.t_end = 0.1;
  aux.points = {make_point(Vec3(0, 1, 0), 0.05, 1),
                make_point(Vec3(0, 2, 0), 0.15, 1),    // outside window: dropped
                make_point(Vec3(0, 3, 0), -0.01, 1)};  // outside window: dropped

  const LidarFrame merged = merge_frames(main, {aux}, rig);
  ASSERT_EQ(merged.points.size(), 3u);
  EXPECT_DOUBLE_EQ(merged.points[0].t, 0.02);
  EXPECT_DOUBLE_EQ(merged.points[1].t, 0.05);
  EXPECT_DOUBLE_EQ(merged.points[2].t, 0.08);
  EXPECT_EQ(merged.points[1].source, 1);
  EXPECT_EQ(merged.sensor_id, 0);
  EXPECT_DOUBLE_EQ(merged.t_end, 0.1);
}

TEST(Merge, AppliesRelativeExtrinsic) {
  const SensorRig rig = two_sensor_rig();
  LidarFrame main;
  main.sensor_id = 0;
  main.t_start = 0.0;
  main.t_end = 0.1;

  LidarFrame aux;
  aux.sensor_id = 1;
  const Vec3 p_aux(1.0, 2.0, 3.0);
  aux.points = {make_point(p_aux, 0.05, 1)};

  const LidarFrame merged = merge_frames(main, {aux}, rig);
  ASSERT_EQ(merged.points.size(), 1u);
  // main is the body frame here, so the point lands at E_aux * p
  const Vec3 want = rig.extrinsics.at(1) * p_aux;
  EXPECT_NEAR((merged.points[0].xyz - want).norm(), 0.0, 1e-12);
  // rotation by +90 deg about x maps (.,y,z) -> (.,-z,y)
  EXPECT_NEAR(merged.points[0].xyz.y(), -3.0 + 0.0, 1e-12);
  EXPECT_NEAR(merged.points[0].xyz.z(), 2.0 + 0.12, 1e-12);
}

TEST(Merge, UnknownSensorThrows) {
  SensorRig rig;
  rig.main_id = 0;
  rig.extrinsics[0] = Pose{};
  LidarFrame main;
  main.sensor_id = 0;
  LidarFrame aux;
  aux.sensor_id = 3;
  aux.points = {make_point(Vec3(1, 0, 0), 0.0, 3)};
  try {
    merge_frames(main, {aux}, rig);
    FAIL() << "expected missing-extrinsic error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("sensor 3"), std::string::npos);
  }
}

TEST(Deskew, IdentityWhenStationary) {
  std::vector<std::pair<double, Pose>> poses;
  for (int i = 0; i <= 10; ++i) poses.emplace_back(i * 0.01, Pose{});
  LidarFrame frame;
  frame.t_start = 0.0;
  frame.t_end = 0.1;
  frame.points = {make_point(Vec3(1, 2, 3), 0.03, 0), make_point(Vec3(-1, 0, 5), 0.09, 0)};
  const LidarFrame out = deskew(frame, poses);
  for (size_t i = 0; i < frame.points.size(); ++i) {
    EXPECT_NEAR((out.points[i].xyz - frame.points[i].xyz).norm(), 0.0, 1e-12);
  }
}

// Observations of one fixed world point taken at different instants must
// collapse onto a single point after deskewing to the frame end.
TEST(Deskew, CollapsesFixedWorldPoint) {
  const Vec3 w(3.0, -1.0, 0.5);
  const Vec3 vel(1.0, 0.5, 0.0);
  const Vec3 omega(0.0, 0.0, 0.8);

  auto pose_at = [&](double t) {
    return Pose{exp_so3(omega * t), vel * t};
  };
  std::vector<std::pair<double, Pose>> poses;
  for (int i = 0; i <= 100; ++i) poses.emplace_back(i * 0.001, pose_at(i * 0.001));

  LidarFrame frame;
  frame.t_start = 0.0;
  frame.t_end = 0.1;
  for (int i = 0; i <= 20; ++i) {
    const double t = i * 0.005;
    frame.points.push_back(make_point(pose_at(t).inverse() * w, t, 0));
  }
  const LidarFrame out = deskew(frame, poses);
  const Vec3 want = pose_at(0.1).inverse() * w;
  for (const auto& p : out.points) {
    EXPECT_NEAR((p.xyz - want).norm(), 0.0, 1e-9);
  }
}

TEST(Deskew, ReskewRoundTrip) {
  std::vector<std::pair<double, Pose>> poses;
  for (int i = 0; i <= 50; ++i) {
    const double t = i * 0.002;
    poses.emplace_back(t, Pose{exp_so3(Vec3(0.1, -0.3, 0.5) * t), Vec3(2.0, 0.0, -0.5) * t});
  }
  LidarFrame frame;
  frame.t_start = 0.0;
  frame.t_end = 0.1;
  for (int i = 0; i < 30; ++i) {
    frame.points.push_back(make_point(Vec3(std::sin(i * 0.7), std::cos(i * 1.1), i * 0.05),
                                      0.1 * i / 29.0, 0));
  }
  const LidarFrame skewed = deskew(frame, poses);
  // invert the per-point map x' = T(te)^-1 T(tp) x
  auto pose_at = [&](double t) {
    for (size_t i = 1; i < poses.size(); ++i) {
      if (poses[i].first >= t) {
        const double u = (t - poses[i - 1].first) / (poses[i].first - poses[i - 1].first);
        return interpolate_pose(poses[i - 1].second, poses[i].second, u);
      }
    }
    return poses.back().second;
  };
  const Pose Te = pose_at(0.1);
  for (size_t i = 0; i < frame.points.size(); ++i) {
    const Vec3 back = pose_at(frame.points[i].t).inverse() * (Te * skewed.points[i].xyz);
    EXPECT_NEAR((back - frame.points[i].xyz).norm(), 0.0, 1e-9);
  }
}

TEST(Deskew, CoverageErrors) {
  std::vector<std::pair<double, Pose>> poses{{0.0, Pose{}}, {0.05, Pose{}}};
  LidarFrame frame;
  frame.t_end = 0.2;  // beyond coverage
  frame.points = {make_point(Vec3(1, 0, 0), 0.01, 0)};
  try {
    deskew(frame, poses);
    FAIL() << "expected coverage error";
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("outside pose coverage"), std::string::npos);
    EXPECT_NE(what.find("0.2"), std::string::npos);
  }
  EXPECT_THROW(deskew(frame, {}), std::invalid_argument);
}

TEST(SliceImu, WindowWithInterpolatedBoundaries) {
  std::vector<ImuSample> stream;
  for (int i = 0; i <= 10; ++i) {
    ImuSample s;
    s.t = i * 0.1;
    s.omega = Vec3(double(i), 0, 0);   // linear in t: interpolation is exact
    s.accel = Vec3(0, 2.0 * i, 9.81);
    stream.push_back(s);
  }
  const auto out = slice_imu(stream, 0.25, 0.65);
  ASSERT_GE(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out.front().t, 0.25);
  EXPECT_DOUBLE_EQ(out.back().t, 0.65);
  EXPECT_NEAR(out.front().omega.x(), 2.5, 1e-12);
  EXPECT_NEAR(out.back().accel.y(), 13.0, 1e-12);
  // interior samples are the raw stream in (t0, t1]
  ASSERT_EQ(out.size(), 6u);  // 0.25, 0.3, 0.4, 0.5, 0.6, 0.65
  EXPECT_DOUBLE_EQ(out[1].t, 0.3);
  EXPECT_DOUBLE_EQ(out[4].t, 0.6);
}

TEST(SliceImu, ExactBoundariesNotDuplicated) {
  // exactly representable timestamps so the window ends hit stream samples
  std::vector<ImuSample> stream;
  for (int i = 0; i <= 10; ++i) {
    ImuSample s;
    s.t = i * 0.125;
    stream.push_back(s);
  }
  const auto out = slice_imu(stream, 0.375, 0.75);
  ASSERT_EQ(out.size(), 4u);  // 0.375, 0.5, 0.625, 0.75
  EXPECT_DOUBLE_EQ(out.front().t, 0.375);
  EXPECT_DOUBLE_EQ(out.back().t, 0.75);
  for (size_t i = 1; i < out.size(); ++i) EXPECT_GT(out[i].t, out[i - 1].t);
}

TEST(SliceImu, Errors) {
  std::vector<ImuSample> stream(3);
  stream[0].t = 0.0;
  stream[1].t = 0.5;
  stream[2].t = 1.0;
  EXPECT_THROW(slice_imu(stream, 0.5, 0.5), std::invalid_argument);
  EXPECT_THROW(slice_imu(stream, -0.5, 0.5), std::runtime_error);
  EXPECT_THROW(slice_imu(stream, 0.5, 1.5), std::runtime_error);
  EXPECT_THROW(slice_imu({}, 0.0, 1.0), std::runtime_error);
}

TEST(Rig, Validation) {
  SensorRig rig;
  rig.main_id = 0;
  EXPECT_THROW(rig.validate(), std::runtime_error);  // no main extrinsic
  rig.extrinsics[0] = Pose{};
  EXPECT_NO_THROW(rig.validate());
  Pose bad;
  bad.R(0, 0) = 2.0;
  rig.extrinsics[1] = bad;
  EXPECT_THROW(rig.validate(), std::runtime_error);
}
