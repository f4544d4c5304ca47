#pragma once

// On-disk dataset layout:
//   imu.csv                       header, then t,wx,wy,wz,ax,ay,az
//   scans/<sensor>/<t_start>.bin  records of float32 x,y,z + float64 t
//   scans/<sensor>/meta.json      frame list with t_start / t_end
//   rig.json                      row-major rotation + translation per sensor
//   groundtruth.tum               reference trajectory (simulated data only)
// Parse failures name the file and byte offset.

#include "knlio/preprocess.hpp"
#include "knlio/simulator.hpp"
#include "knlio/trajectory.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace knlio {

namespace fs = std::filesystem;

inline void write_imu_csv(const std::vector<ImuSample>& imu, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_imu_csv: cannot open " + path.string());
  f << "t,wx,wy,wz,ax,ay,az\n";
  char buf[320];
  for (const ImuSample& s : imu) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  s.t, s.omega.x(), s.omega.y(), s.omega.z(),
                  s.accel.x(), s.accel.y(), s.accel.z());
    f << buf;
  }
  if (!f) throw std::runtime_error("write_imu_csv: write failed for " + path.string());
}

inline std::vector<ImuSample> read_imu_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_imu_csv: cannot open " + path.string());
  std::vector<ImuSample> out;
  std::string line;
  size_t offset = 0;
  bool first = true;
  while (std::getline(f, line)) {
    const size_t line_offset = offset;
    offset += line.size() + 1;
    if (first) {
      first = false;
      if (line.rfind("t,", 0) == 0) continue;  // header
    }
    if (line.empty()) continue;
    ImuSample s;
    double v[7];
    int n = std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf",
                        &v[0], &v[1], &v[2], &v[3], &v[4], &v[5], &v[6]);
    if (n != 7) {
      throw std::runtime_error("read_imu_csv: malformed record in " + path.string() +
                               " at byte " + std::to_string(line_offset));
    }
    s.t = v[0];
    s.omega = Vec3(v[1], v[2], v[3]);
    s.accel = Vec3(v[4], v[5], v[6]);
    out.push_back(s);
  }
  return out;
}

namespace detail {

inline std::string frame_filename(double t_start) {
  char buf[64];
  // Zero-padded so lexicographic file order matches time order.
  std::snprintf(buf, sizeof(buf), "%013.6f.bin", t_start);
  return buf;
}

}  // namespace detail

inline void write_scan_frames(const std::vector<LidarFrame>& frames, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["frames"] = nlohmann::json::array();
  for (const LidarFrame& fr : frames) {
    const std::string name = detail::frame_filename(fr.t_start);
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw std::runtime_error("write_scan_frames: cannot open " + (dir / name).string());
    for (const LidarPoint& p : fr.points) {
      const float xyz[3] = {float(p.xyz.x()), float(p.xyz.y()), float(p.xyz.z())};
      f.write(reinterpret_cast<const char*>(xyz), 12);
      f.write(reinterpret_cast<const char*>(&p.t), 8);
    }
    if (!f) throw std::runtime_error("write_scan_frames: write failed for " + (dir / name).string());
    meta["frames"].push_back({{"file", name}, {"t_start", fr.t_start}, {"t_end", fr.t_end}});
  }
  std::ofstream mf(dir / "meta.json");
  mf << meta.dump(2) << "\n";
  if (!mf) throw std::runtime_error("write_scan_frames: cannot write meta.json in " + dir.string());
}

inline std::vector<LidarFrame> read_scan_frames(const fs::path& dir, int sensor_id) {
  const fs::path meta_path = dir / "meta.json";
  std::ifstream mf(meta_path);
  if (!mf) throw std::runtime_error("read_scan_frames: cannot open " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("read_scan_frames: malformed " + meta_path.string() +
                             " at byte " + std::to_string(e.byte));
  }

  std::vector<LidarFrame> out;
  for (const auto& item : meta.at("frames")) {
    LidarFrame fr;
    fr.sensor_id = sensor_id;
    fr.t_start = item.at("t_start").get<double>();
    fr.t_end = item.at("t_end").get<double>();
    const fs::path bin = dir / item.at("file").get<std::string>();
    std::ifstream f(bin, std::ios::binary);
    if (!f) throw std::runtime_error("read_scan_frames: cannot open " + bin.string());
    f.seekg(0, std::ios::end);
    const std::streamoff size = f.tellg();
    f.seekg(0);
    constexpr std::streamoff kRecord = 20;  // 3 * f32 + f64
    if (size % kRecord != 0) {
      throw std::runtime_error("read_scan_frames: malformed record in " + bin.string() +
                               " at byte " + std::to_string((size / kRecord) * kRecord));
    }
    fr.points.resize(size_t(size / kRecord));
    for (LidarPoint& p : fr.points) {
      float xyz[3];
      f.read(reinterpret_cast<char*>(xyz), 12);
      f.read(reinterpret_cast<char*>(&p.t), 8);
      p.xyz = Vec3(xyz[0], xyz[1], xyz[2]);
      p.source = sensor_id;
    }
    out.push_back(std::move(fr));
  }
  std::sort(out.begin(), out.end(),
            [](const LidarFrame& a, const LidarFrame& b) { return a.t_start < b.t_start; });
  return out;
}

inline void write_rig(const SensorRig& rig, const fs::path& path) {
  nlohmann::json j;
  j["main"] = rig.main_id;
  j["sensors"] = nlohmann::json::array();
  for (const auto& [id, pose] : rig.extrinsics) {
    std::vector<double> R(9), t(3);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) R[size_t(r * 3 + c)] = pose.R(r, c);
      t[size_t(r)] = pose.t[r];
    }
    j["sensors"].push_back({{"id", id}, {"R", R}, {"t", t}});
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_rig: cannot open " + path.string());
  f << j.dump(2) << "\n";
}

inline SensorRig read_rig(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_rig: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("read_rig: malformed " + path.string() + " at byte " +
                             std::to_string(e.byte));
  }
  SensorRig rig;
  rig.main_id = j.at("main").get<int>();
  for (const auto& s : j.at("sensors")) {
    Pose p;
    const auto R = s.at("R").get<std::vector<double>>();
    const auto t = s.at("t").get<std::vector<double>>();
    if (R.size() != 9 || t.size() != 3) {
      throw std::runtime_error("read_rig: bad extrinsic shape in " + path.string());
    }
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.R(r, c) = R[size_t(r * 3 + c)];
      p.t[r] = t[size_t(r)];
    }
    rig.extrinsics[s.at("id").get<int>()] = p;
  }
  rig.validate();
  return rig;
}

inline void export_dataset(const SimulatedDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  write_imu_csv(data.imu, dir / "imu.csv");
  write_rig(data.rig, dir / "rig.json");
  for (const auto& [id, frames] : data.scans) {
    write_scan_frames(frames, dir / "scans" / std::to_string(id));
  }
  TrajectoryRecord gt;
  for (const GroundTruthState& s : data.truth) gt.append(s.t, s.pose);
  write_tum(gt, (dir / "groundtruth.tum").string());
}

struct Dataset {
  std::vector<ImuSample> imu;
  std::map<int, std::vector<LidarFrame>> scans;
  SensorRig rig;
};

inline Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.imu = read_imu_csv(dir / "imu.csv");
  d.rig = read_rig(dir / "rig.json");
  const fs::path scans = dir / "scans";
  if (!fs::exists(scans)) throw std::runtime_error("load_dataset: missing " + scans.string());
  for (const auto& entry : fs::directory_iterator(scans)) {
    if (!entry.is_directory()) continue;
    const int id = std::stoi(entry.path().filename().string());
    d.scans[id] = read_scan_frames(entry.path(), id);
  }
  if (d.scans.find(d.rig.main_id) == d.scans.end()) {
    throw std::runtime_error("load_dataset: no scans for main sensor " +
                             std::to_string(d.rig.main_id));
  }
  return d;
}

}  // namespace knlio
