#include "knlio/config.hpp"
#include "knlio/dataset_io.hpp"
#include "knlio/log.hpp"
#include "knlio/training.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>

using namespace knlio;

// Pin the env before anything can touch the cached log level.
static const bool g_env_ready = [] {
  ::setenv("KNLIO_LOG", "info", 1);
  return true;
}();

namespace {

fs::path temp_dir(const char* name) {
  const fs::path p = fs::path(::testing::TempDir()) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Logging, EnvVarSelectsLevel) {
  ASSERT_TRUE(g_env_ready);
  EXPECT_EQ(log_level(), LogLevel::kInfo);
  logf(LogLevel::kDebug, "suppressed %d", 1);  // above level: no crash, no assert
  logf(LogLevel::kError, "visible %s", "ok");
}

TEST(ImuCsv, RoundTripIsExact) {
  std::vector<ImuSample> imu;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int i = 0; i < 200; ++i) {
    ImuSample s;
    s.t = 0.005 * i + 1e-13 * g(rng);  // awkward doubles on purpose
    s.omega = Vec3(g(rng), g(rng), g(rng));
    s.accel = Vec3(g(rng), g(rng), g(rng)) * 9.81;
    imu.push_back(s);
  }
  const fs::path dir = temp_dir("imu_rt");
  write_imu_csv(imu, dir / "imu.csv");
  const std::vector<ImuSample> back = read_imu_csv(dir / "imu.csv");
  ASSERT_EQ(back.size(), imu.size());
  for (size_t i = 0; i < imu.size(); ++i) {
    EXPECT_EQ(back[i].t, imu[i].t);  // %.17g round-trips doubles bitwise
    EXPECT_EQ(back[i].omega, imu[i].omega);
    EXPECT_EQ(back[i].accel, imu[i].accel);
  }
}

TEST(ImuCsv, MalformedRecordNamesFileAndByte) {
  const fs::path dir = temp_dir("imu_bad");
  const std::string header = "t,wx,wy,wz,ax,ay,az\n";
  const std::string good = "0.0,0,0,0,0,0,9.81\n";
  {
    std::ofstream f(dir / "imu.csv");
    f << header << good << "0.1,broken\n";
  }
  try {
    read_imu_csv(dir / "imu.csv");
    FAIL() << "expected malformed-record error";
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("imu.csv"), std::string::npos);
    EXPECT_NE(what.find("at byte " + std::to_string(header.size() + good.size())),
              std::string::npos);
  }
  EXPECT_THROW(read_imu_csv(dir / "nope.csv"), std::runtime_error);
}

TEST(ScanFrames, RoundTripPreservesRecordsAndOrder) {
  std::vector<LidarFrame> frames;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int k = 2; k >= 0; --k) {  // write out of order; reader must sort
    LidarFrame fr;
    fr.sensor_id = 3;
    fr.t_start = 0.1 * k;
    fr.t_end = 0.1 * k + 0.1;
    for (int i = 0; i < 50; ++i) {
      LidarPoint p;
      p.xyz = Vec3(float(u(rng)), float(u(rng)), float(u(rng)));  // f32 payload
      p.t = fr.t_start + 0.001 * i;
      fr.points.push_back(p);
    }
    frames.push_back(fr);
  }
  const fs::path dir = temp_dir("scans_rt");
  write_scan_frames(frames, dir);
  const std::vector<LidarFrame> back = read_scan_frames(dir, 3);
  ASSERT_EQ(back.size(), frames.size());
  EXPECT_LT(back[0].t_start, back[1].t_start);
  for (const LidarFrame& fr : back) {
    const LidarFrame& orig = *std::find_if(frames.begin(), frames.end(), [&](const auto& f) {
      return f.t_start == fr.t_start;
    });
    ASSERT_EQ(fr.points.size(), orig.points.size());
    EXPECT_EQ(fr.t_end, orig.t_end);
    for (size_t i = 0; i < fr.points.size(); ++i) {
      EXPECT_EQ(fr.points[i].xyz, orig.points[i].xyz);
      EXPECT_EQ(fr.points[i].t, orig.points[i].t);
      EXPECT_EQ(fr.points[i].source, 3);
    }
  }
}

TEST(ScanFrames, TruncatedBinaryNamesByteOffset) {
  const fs::path dir = temp_dir("scans_bad");
  LidarFrame fr;
  fr.t_start = 0.0;
  fr.t_end = 0.1;
  fr.points.resize(2);
  write_scan_frames({fr}, dir);
  const fs::path bin = dir / detail::frame_filename(0.0);
  std::string bytes = slurp(bin);
  {
    std::ofstream f(bin, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), std::streamsize(bytes.size() - 7));  // 33 bytes: 20 + 13
  }
  try {
    read_scan_frames(dir, 0);
    FAIL() << "expected malformed-record error";
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find(".bin"), std::string::npos);
    EXPECT_NE(what.find("at byte 20"), std::string::npos);
  }
}

TEST(Rig, RoundTripAndValidation) {
  SensorRig rig;
  rig.main_id = 0;
  rig.extrinsics[0] = Pose{};
  Pose aux;
  aux.R = exp_so3(Vec3(0.1, -0.7, 2.0));
  aux.t = Vec3(0.05, 0.0, 0.12);
  rig.extrinsics[1] = aux;
  const fs::path dir = temp_dir("rig_rt");
  write_rig(rig, dir / "rig.json");
  const SensorRig back = read_rig(dir / "rig.json");
  EXPECT_EQ(back.main_id, 0);
  ASSERT_EQ(back.extrinsics.size(), 2u);
  EXPECT_EQ(back.extrinsics.at(1).R, aux.R);
  EXPECT_EQ(back.extrinsics.at(1).t, aux.t);

  {
    std::ofstream f(dir / "rig.json");
    f << "{ not json";
  }
  try {
    read_rig(dir / "rig.json");
    FAIL() << "expected parse error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("at byte"), std::string::npos);
  }
}

TEST(DatasetRoundTrip, SimulatedDatasetSurvivesExportAndLoad) {
  Scenario sc = make_scenario("static_10s", 9, /*dual_rig=*/true);
  sc.spec.times = {0.0, 1.0};  // trim to keep the test fast
  sc.spec.poses = {sc.spec.poses.front(), sc.spec.poses.back()};
  const SimulatedDataset data = simulate(sc);
  const fs::path dir = temp_dir("dataset_rt");
  export_dataset(data, dir);

  const Dataset back = load_dataset(dir);
  ASSERT_EQ(back.imu.size(), data.imu.size());
  for (size_t i = 0; i < data.imu.size(); ++i) {
    EXPECT_EQ(back.imu[i].t, data.imu[i].t);
    EXPECT_EQ(back.imu[i].omega, data.imu[i].omega);
    EXPECT_EQ(back.imu[i].accel, data.imu[i].accel);
  }
  ASSERT_EQ(back.scans.size(), 2u);
  EXPECT_EQ(back.scans.at(0).size(), data.scans.at(0).size());
  EXPECT_EQ(back.scans.at(1).size(), data.scans.at(1).size());
  EXPECT_EQ(back.rig.main_id, data.rig.main_id);
  EXPECT_TRUE(fs::exists(dir / "groundtruth.tum"));

  fs::remove_all(dir / "scans" / "0");
  EXPECT_THROW(load_dataset(dir), std::runtime_error);  // main sensor missing
  fs::remove_all(dir / "scans");
  EXPECT_THROW(load_dataset(dir), std::runtime_error);
}

TEST(TumIo, RoundTripCanonicalizesQuaternions) {
  TrajectoryRecord tr;
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g;
  for (int i = 0; i < 40; ++i) {
    Pose p;
    p.R = exp_so3(Vec3(g(rng), g(rng), g(rng)));
    p.t = Vec3(g(rng), g(rng), g(rng));
    tr.append(0.125 * i, p);  // exactly representable through %.9f
  }
  const fs::path dir = temp_dir("tum_rt");
  const std::string path = (dir / "traj.tum").string();
  write_tum(tr, path);

  // Every serialized qw is non-negative.
  std::ifstream f(path);
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream is(line);
    double v[8];
    for (double& x : v) is >> x;
    EXPECT_GE(v[7], 0.0);
  }

  const TrajectoryRecord back = read_tum(path);
  ASSERT_EQ(back.entries.size(), tr.entries.size());
  for (size_t i = 0; i < tr.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].t, tr.entries[i].t);
    EXPECT_LT((back.entries[i].pose.R - tr.entries[i].pose.R).norm(), 1e-7);
    EXPECT_LT((back.entries[i].pose.t - tr.entries[i].pose.t).norm(), 1e-8);
  }

  // Identical trajectories serialize byte-identically.
  const std::string path2 = (dir / "traj2.tum").string();
  write_tum(back, path2);
  write_tum(read_tum(path2), (dir / "traj3.tum").string());
  EXPECT_EQ(slurp(dir / "traj2.tum"), slurp(dir / "traj3.tum"));
}

TEST(TumIo, ErrorsAndMonotonicity) {
  TrajectoryRecord tr;
  tr.append(0.0, Pose{});
  EXPECT_THROW(tr.append(0.0, Pose{}), std::invalid_argument);
  EXPECT_THROW(tr.append(-1.0, Pose{}), std::invalid_argument);

  const fs::path dir = temp_dir("tum_bad");
  {
    std::ofstream f(dir / "bad.tum");
    f << "# comment\n0.0 0 0 0 0 0 0 1\nbroken line\n";
  }
  try {
    read_tum((dir / "bad.tum").string());
    FAIL() << "expected malformed-line error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("at byte"), std::string::npos);
  }
  EXPECT_THROW(read_tum((dir / "missing.tum").string()), std::runtime_error);
}

TEST(MapSnapshot, SaveLoadRoundTripIsByteStable) {
  MapConfig cfg;
  cfg.resolution = 0.1;
  NeuralMap map(cfg);
  std::vector<Vec3> pts;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 400; ++i) pts.emplace_back(u(rng), u(rng), 0.0);
  map.insert_frame(pts, 0);

  std::mt19937_64 ray_rng(4);
  const std::vector<TrainingSample> samples =
      sample_training_points(pts, Vec3(0, 0, 2.0), cfg.truncation, 3, 1, ray_rng);
  TrainingConfig tc;
  tc.iters = 40;
  optimize_local_map(map, samples, tc);

  const fs::path dir = temp_dir("snap_rt");
  const std::string a = (dir / "a.knm").string();
  const std::string b = (dir / "b.knm").string();
  map.save(a);
  NeuralMap loaded = NeuralMap::load(a);
  loaded.save(b);
  EXPECT_EQ(slurp(a), slurp(b));

  ASSERT_EQ(loaded.size(), map.size());
  EXPECT_EQ(loaded.latest_frame(), map.latest_frame());
  for (int i = 0; i < 50; ++i) {
    const Vec3 q(u(rng), u(rng), u(rng));
    const FieldSample s0 = map.query_sdf(q);
    const FieldSample s1 = loaded.query_sdf(q);
    EXPECT_EQ(s0.valid, s1.valid);
    if (s0.valid) {
      EXPECT_EQ(s0.sdf, s1.sdf);
      EXPECT_EQ(s0.gradient, s1.gradient);
    }
  }
}

TEST(MapSnapshot, RejectsGarbageVersionAndTruncation) {
  MapConfig cfg;
  NeuralMap map(cfg);
  map.insert_frame({Vec3(0, 0, 0), Vec3(1, 0, 0)}, 0);
  const fs::path dir = temp_dir("snap_bad");
  const std::string path = (dir / "m.knm").string();
  map.save(path);

  std::string bytes = slurp(path);
  {
    std::string garbage = bytes;
    garbage[0] = 'X';
    std::ofstream f(dir / "magic.knm", std::ios::binary);
    f << garbage;
  }
  EXPECT_THROW(NeuralMap::load((dir / "magic.knm").string()), std::runtime_error);

  {
    std::string v2 = bytes;
    v2[6] = 2;  // little-endian u32 version right after the magic
    std::ofstream f(dir / "v2.knm", std::ios::binary);
    f << v2;
  }
  EXPECT_THROW(NeuralMap::load((dir / "v2.knm").string()), std::runtime_error);

  {
    std::ofstream f(dir / "trunc.knm", std::ios::binary);
    f.write(bytes.data(), std::streamsize(bytes.size() - 9));
  }
  EXPECT_THROW(NeuralMap::load((dir / "trunc.knm").string()), std::runtime_error);
  EXPECT_THROW(NeuralMap::load((dir / "missing.knm").string()), std::runtime_error);
}

TEST(ConfigFile, ParsesKnownKeysAndRejectsUnknown) {
  const fs::path dir = temp_dir("cfg");
  {
    std::ofstream f(dir / "good.toml");
    f << "# comment\n"
      << "pipeline.mode = semi\n"
      << "pipeline.seed = 77\n"
      << "training.iters = 12\n"
      << "map.resolution = 0.2\n"
      << "measurement.sigma_sdf = 0.25\n";
  }
  const PipelineConfig cfg = load_config((dir / "good.toml").string());
  EXPECT_EQ(cfg.mode, "semi");
  EXPECT_EQ(cfg.seed, 77u);
  EXPECT_EQ(cfg.training.iters, 12);
  EXPECT_EQ(cfg.map.resolution, 0.2);
  EXPECT_EQ(cfg.measurement.sigma_sdf, 0.25);

  {
    std::ofstream f(dir / "bad.toml");
    f << "pipeline.mode = semi\nnot_a_key = 3\n";
  }
  try {
    load_config((dir / "bad.toml").string());
    FAIL() << "expected unknown-key error";
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("not_a_key"), std::string::npos);
    EXPECT_NE(what.find("line 2"), std::string::npos);
  }
}
