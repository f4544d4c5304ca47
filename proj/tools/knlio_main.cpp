// knlio command line: simulate synthetic datasets, run odometry, extract
// meshes from map snapshots, and evaluate trajectories or reconstructions.

#include "knlio/knlio.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace knlio;

namespace {

MeshBounds parse_bounds(const std::string& s) {
  MeshBounds b;
  double v[6];
  std::istringstream is(s);
  std::string tok;
  for (int i = 0; i < 6; ++i) {
    if (!std::getline(is, tok, ',')) {
      throw std::runtime_error("bounds: expected 6 comma-separated values, got '" + s + "'");
    }
    v[i] = std::stod(tok);
  }
  b.min = Vec3(v[0], v[1], v[2]);
  b.max = Vec3(v[3], v[4], v[5]);
  return b;
}

std::vector<Vec3> read_points_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_points_csv: cannot open " + path.string());
  std::vector<Vec3> out;
  std::string line;
  size_t offset = 0;
  while (std::getline(f, line)) {
    const size_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    double x, y, z;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &x, &y, &z) != 3) {
      throw std::runtime_error("read_points_csv: malformed record in " + path.string() +
                               " at byte " + std::to_string(line_offset));
    }
    out.emplace_back(x, y, z);
  }
  return out;
}

int cmd_simulate(const std::string& scenario, uint64_t seed, bool dual,
                 const fs::path& out_dir) {
  Scenario sc = make_scenario(scenario, seed, dual);
  SimulatedDataset data = simulate(sc);
  export_dataset(data, out_dir);
  size_t frames = 0;
  for (const auto& [id, fr] : data.scans) frames += fr.size();
  std::cout << "simulated '" << scenario << "' seed " << seed << ": " << data.imu.size()
            << " imu samples, " << frames << " scan frames -> " << out_dir.string() << "\n";
  return 0;
}

int cmd_run(const fs::path& dataset_dir, const std::string& config_path,
            const std::string& mode, long long seed, const fs::path& out_dir) {
  PipelineConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (!mode.empty()) cfg.mode = mode;
  if (seed >= 0) cfg.seed = uint64_t(seed);
  cfg.validate();

  const Dataset data = load_dataset(dataset_dir);
  Engine engine(cfg, data.rig);
  const RunResult result = run_odometry(data, cfg, engine);

  fs::create_directories(out_dir);
  write_tum(result.trajectory, (out_dir / "trajectory.tum").string());
  engine.map().save((out_dir / "map.knm").string());
  std::ofstream rf(out_dir / "report.json");
  rf << report_to_json(result.report) << "\n";

  std::cout << "run: " << result.report.frames << " frames, " << result.report.skips
            << " skips, map " << engine.map().size() << " points, "
            << (result.report.failed ? "FAILED" : "ok") << " -> " << out_dir.string() << "\n";
  return result.report.failed ? 2 : 0;
}

int cmd_mesh(const fs::path& map_path, const std::string& bounds_str, double voxel,
             const fs::path& out_path) {
  NeuralMap map = NeuralMap::load(map_path.string());
  MeshBounds bounds;
  if (!bounds_str.empty()) {
    bounds = parse_bounds(bounds_str);
  } else {
    if (map.empty()) throw std::runtime_error("mesh: empty map and no --bounds given");
    Vec3 lo = map.position(0), hi = map.position(0);
    for (size_t i = 1; i < map.size(); ++i) {
      lo = lo.cwiseMin(map.position(i));
      hi = hi.cwiseMax(map.position(i));
    }
    const double margin = 2.0 * map.config().truncation;
    bounds.min = lo.array() - margin;
    bounds.max = hi.array() + margin;
  }
  const TriangleMesh mesh = extract_mesh(map, bounds, voxel);
  write_mesh(mesh, out_path.string());
  std::cout << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
            << " triangles -> " << out_path.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& est, const std::string& ref, const std::string& mesh_path,
             const std::string& ref_points, double threshold_cm, double density,
             const std::string& out_path) {
  nlohmann::json j;
  if (!est.empty()) {
    const TrajectoryRecord e = read_tum(est);
    const TrajectoryRecord r = read_tum(ref);
    j["ate_rmse_m"] = ate_rmse(e, r);
  }
  if (!mesh_path.empty()) {
    const TriangleMesh mesh = read_mesh(mesh_path);
    const std::vector<Vec3> recon = sample_mesh_points(mesh, density, 17);
    const std::vector<Vec3> reference = read_points_csv(ref_points);
    const MapMetrics m = map_metrics(recon, reference, threshold_cm);
    j["map"] = {{"accuracy_cm", m.accuracy_cm},
                {"completeness_cm", m.completeness_cm},
                {"chamfer_l1_cm", m.chamfer_l1_cm},
                {"f_score", m.f_score},
                {"threshold_cm", m.threshold_cm}};
  }
  if (j.empty()) throw std::runtime_error("eval: nothing to evaluate (need --est or --mesh)");
  const std::string text = j.dump(2);
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    f << text << "\n";
  }
  std::cout << text << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knlio: LiDAR-inertial odometry on a neural-point SDF map"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  std::string scenario = "static_10s";
  uint64_t sim_seed = 1;
  bool dual = false;
  std::string sim_out = "dataset";
  sim->add_option("--scenario", scenario,
                  "static_10s | figure_eight_60s | aggressive_spin_30s | office_loop_15s");
  sim->add_option("--seed", sim_seed, "random seed");
  sim->add_flag("--dual-rig", dual, "add a vertically mounted second LiDAR");
  sim->add_option("--out", sim_out, "output dataset directory")->required();

  auto* run = app.add_subcommand("run", "run odometry over a dataset");
  std::string dataset, config, mode, run_out = "out";
  long long run_seed = -1;
  run->add_option("--dataset", dataset, "dataset directory")->required();
  run->add_option("--config", config, "config file (TOML-style key = value)");
  run->add_option("--mode", mode, "semi | tight")->check(CLI::IsMember({"semi", "tight", ""}));
  run->add_option("--seed", run_seed, "override config seed");
  run->add_option("--out", run_out, "output directory")->required();

  auto* mesh = app.add_subcommand("mesh", "extract a mesh from a map snapshot");
  std::string map_path, bounds, mesh_out = "mesh.ply";
  double voxel = 0.05;
  mesh->add_option("--map", map_path, "map snapshot (.knm)")->required();
  mesh->add_option("--bounds", bounds, "x0,y0,z0,x1,y1,z1 (default: map extent)");
  mesh->add_option("--mesh-voxel", voxel, "grid voxel size, m");
  mesh->add_option("--out", mesh_out, "output PLY path")->required();

  auto* ev = app.add_subcommand("eval", "evaluate trajectories and reconstructions");
  std::string est, ref, ev_mesh, ref_points, ev_out;
  double threshold_cm = 20.0, density = 10.0;
  ev->add_option("--est", est, "estimated trajectory (TUM)");
  ev->add_option("--ref", ref, "reference trajectory (TUM)");
  ev->add_option("--mesh", ev_mesh, "reconstructed mesh (PLY)");
  ev->add_option("--ref-points", ref_points, "reference surface points (x,y,z csv)");
  ev->add_option("--threshold-cm", threshold_cm, "F-score threshold");
  ev->add_option("--density", density, "mesh sampling density, points/m^2");
  ev->add_option("--out", ev_out, "write metrics JSON here as well");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(scenario, sim_seed, dual, sim_out);
    if (run->parsed()) return cmd_run(dataset, config, mode, run_seed, run_out);
    if (mesh->parsed()) return cmd_mesh(map_path, bounds, voxel, mesh_out);
    if (ev->parsed()) {
      if (!est.empty() && ref.empty()) throw std::runtime_error("eval: --est requires --ref");
      if (!ev_mesh.empty() && ref_points.empty()) {
        throw std::runtime_error("eval: --mesh requires --ref-points");
      }
      return cmd_eval(est, ref, ev_mesh, ref_points, threshold_cm, density, ev_out);
    }
  } catch (const std::exception& e) {
    const char* stage = sim->parsed() ? "simulate" : run->parsed() ? "run"
                        : mesh->parsed() ? "mesh" : "eval";
    std::cerr << "knlio " << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
