#pragma once

// Neural-point SDF map. Points carry learnable features; a shared MLP decodes
// the inverse-distance-weighted feature (plus an optional aggregated offset
// channel) into a signed distance. Gradients w.r.t. the query position are
// analytic through the whole chain: weights, features and decoder.

#include "knlio/geometry.hpp"
#include "knlio/kdtree.hpp"
#include "knlio/mlp.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace knlio {

struct MapConfig {
  int feature_dim = 8;
  int hidden_dim = 64;
  double resolution = 0.1;        // minimum inter-point spacing, m
  int k_neighbors = 6;
  int k_min = 3;
  double query_radius_factor = 3.0;  // r_q = factor * resolution
  double weight_epsilon = 1e-6;      // m^2, in w = 1/(d^2 + eps)
  double truncation = 0.3;           // m
  bool offset_channel = true;
  Activation activation = Activation::kSilu;
  uint64_t decoder_seed = 42;
  int local_window_frames = 100;
  int decoder_warmup_frames = 30;

  int input_dim() const { return feature_dim + (offset_channel ? 3 : 0); }

  void validate() const {
    if (feature_dim < 1 || hidden_dim < 1) throw std::invalid_argument("MapConfig: bad dims");
    if (resolution <= 0.0) throw std::invalid_argument("MapConfig: resolution must be > 0");
    if (k_min < 1 || k_neighbors < k_min) throw std::invalid_argument("MapConfig: bad neighbor counts");
    if (truncation <= 0.0) throw std::invalid_argument("MapConfig: truncation must be > 0");
  }
};

struct FieldSample {
  double sdf = 0.0;
  Vec3 gradient = Vec3::Zero();
  bool valid = false;
  int neighbor_count = 0;
};

class NeuralMap {
 public:
  explicit NeuralMap(const MapConfig& cfg = {})
      : cfg_(cfg),
        decoder_(cfg.input_dim(), cfg.hidden_dim, cfg.activation, cfg.decoder_seed) {
    cfg_.validate();
  }

  const MapConfig& config() const { return cfg_; }
  SdfDecoder& decoder() { return decoder_; }
  const SdfDecoder& decoder() const { return decoder_; }

  size_t size() const { return positions_.size(); }
  bool empty() const { return positions_.empty(); }
  int latest_frame() const { return latest_frame_; }

  const Vec3& position(size_t i) const { return positions_[i]; }
  Eigen::VectorXd& feature(size_t i) { return features_[i]; }
  const Eigen::VectorXd& feature(size_t i) const { return features_[i]; }
  int created_at(size_t i) const { return created_[i]; }
  double stability(size_t i) const { return stability_[i]; }
  const std::vector<Vec3>& positions() const { return positions_; }

  // Adds one neural point per input point that has no existing neighbor
  // closer than the resolution. Features start at zero so the decoder bias
  // dominates untrained regions. Returns the number of points added.
  size_t insert_frame(const std::vector<Vec3>& points_world, int frame_idx) {
    size_t added = 0;
    const double res = cfg_.resolution;
    for (const Vec3& p : points_world) {
      if (!p.allFinite()) continue;
      int hit = -1;
      if (index_.has_within(p, res, &hit)) {
        stability_[hit] += 1.0;
        continue;
      }
      positions_.push_back(p);
      features_.push_back(Eigen::VectorXd::Zero(cfg_.feature_dim));
      created_.push_back(frame_idx);
      stability_.push_back(1.0);
      index_.add(p);
      ++added;
    }
    if (frame_idx > latest_frame_) latest_frame_ = frame_idx;
    return added;
  }

  std::vector<Neighbor> neighbors(const Vec3& q) const {
    std::vector<Neighbor> out;
    index_.knn(q, cfg_.k_neighbors, cfg_.query_radius_factor * cfg_.resolution, out);
    return out;
  }

  // Builds the decoder input for a query given its neighbor set. Weights are
  // normalized inverse squared distances; the optional offset channel is the
  // weighted mean of (q - x_i).
  Eigen::VectorXd decoder_input(const Vec3& q, const std::vector<Neighbor>& nb,
                                std::vector<double>* alphas_out = nullptr) const {
    const size_t m = nb.size();
    double wsum = 0.0;
    std::vector<double> w(m);
    for (size_t i = 0; i < m; ++i) {
      w[i] = 1.0 / (nb[i].d2 + cfg_.weight_epsilon);
      wsum += w[i];
    }
    Eigen::VectorXd u = Eigen::VectorXd::Zero(cfg_.input_dim());
    for (size_t i = 0; i < m; ++i) {
      const double a = w[i] / wsum;
      u.head(cfg_.feature_dim) += a * features_[nb[i].index];
      if (cfg_.offset_channel) u.tail(3) += a * (q - positions_[nb[i].index]);
      if (alphas_out) alphas_out->push_back(a);
    }
    return u;
  }

  FieldSample query_sdf(const Vec3& q) const {
    FieldSample s;
    const std::vector<Neighbor> nb = neighbors(q);
    s.neighbor_count = int(nb.size());
    if (s.neighbor_count < cfg_.k_min) return s;

    const size_t m = nb.size();
    std::vector<double> w(m);
    std::vector<Vec3> diff(m);
    double wsum = 0.0;
    for (size_t i = 0; i < m; ++i) {
      diff[i] = q - positions_[nb[i].index];
      w[i] = 1.0 / (nb[i].d2 + cfg_.weight_epsilon);
      wsum += w[i];
    }
    Vec3 dwsum = Vec3::Zero();
    std::vector<Vec3> dw(m);
    for (size_t i = 0; i < m; ++i) {
      dw[i] = -2.0 * w[i] * w[i] * diff[i];
      dwsum += dw[i];
    }

    const int F = cfg_.feature_dim;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(cfg_.input_dim());
    for (size_t i = 0; i < m; ++i) {
      const double a = w[i] / wsum;
      u.head(F) += a * features_[nb[i].index];
      if (cfg_.offset_channel) u.tail(3) += a * diff[i];
    }

    Eigen::VectorXd du;
    s.sdf = decoder_.forward_with_input_grad(u, du);

    // d(sdf)/dq = sum_i d(alpha_i)/dq * (f_i . du_f + diff_i . du_o) + du_o,
    // with d(alpha_i)/dq = (dw_i - alpha_i * sum_j dw_j) / sum_j w_j.
    const Eigen::VectorXd du_f = du.head(F);
    const Vec3 du_o = cfg_.offset_channel ? Vec3(du.tail(3)) : Vec3::Zero();
    Vec3 g = du_o;
    for (size_t i = 0; i < m; ++i) {
      const double a = w[i] / wsum;
      const Vec3 da = (dw[i] - a * dwsum) / wsum;
      const double proj = features_[nb[i].index].dot(du_f) +
                          (cfg_.offset_channel ? diff[i].dot(du_o) : 0.0);
      g += da * proj;
    }
    s.gradient = g;
    s.valid = s.gradient.allFinite() && std::isfinite(s.sdf);
    return s;
  }

  // ---- KNMAP1 snapshot ----------------------------------------------------
  // Little-endian layout:
  //   char[6]  "KNMAP1"
  //   u32      version (1)
  //   u64      point count N
  //   u32      feature dim F
  //   u32      hidden dim H
  //   u32      decoder input dim
  //   u8       activation (0 = silu, 1 = identity)
  //   u8       offset channel flag
  //   u16      reserved (0)
  //   f64      resolution
  //   f64      truncation
  //   f64[3N]  positions (xyz per point)
  //   f64[FN]  features (F per point)
  //   i32[N]   created_at
  //   f64[N]   stability
  //   f64      decoder tensors in order w1 (H*in), b1 (H), w2 (H*H), b2 (H),
  //            w3 (H), b3 (1); matrices column-major.

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("NeuralMap::save: cannot open " + path);
    f.write("KNMAP1", 6);
    write_u32(f, 1);
    write_u64(f, positions_.size());
    write_u32(f, uint32_t(cfg_.feature_dim));
    write_u32(f, uint32_t(cfg_.hidden_dim));
    write_u32(f, uint32_t(cfg_.input_dim()));
    const uint8_t act = cfg_.activation == Activation::kSilu ? 0 : 1;
    f.put(char(act));
    f.put(char(cfg_.offset_channel ? 1 : 0));
    write_u16(f, 0);
    write_f64(f, cfg_.resolution);
    write_f64(f, cfg_.truncation);
    for (const Vec3& p : positions_) {
      write_f64(f, p.x());
      write_f64(f, p.y());
      write_f64(f, p.z());
    }
    for (const Eigen::VectorXd& ft : features_) {
      for (Eigen::Index i = 0; i < ft.size(); ++i) write_f64(f, ft[i]);
    }
    for (int c : created_) write_i32(f, c);
    for (double st : stability_) write_f64(f, st);
    write_tensor(f, decoder_.w1());
    write_tensor(f, decoder_.b1());
    write_tensor(f, decoder_.w2());
    write_tensor(f, decoder_.b2());
    write_tensor(f, decoder_.w3());
    write_f64(f, decoder_.b3());
    if (!f) throw std::runtime_error("NeuralMap::save: write failed for " + path);
  }

  static NeuralMap load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("NeuralMap::load: cannot open " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, "KNMAP1", 6) != 0) {
      throw std::runtime_error("NeuralMap::load: bad magic in " + path);
    }
    const uint32_t version = read_u32(f);
    if (version != 1) throw std::runtime_error("NeuralMap::load: unsupported version");
    const uint64_t n = read_u64(f);
    MapConfig cfg;
    cfg.feature_dim = int(read_u32(f));
    cfg.hidden_dim = int(read_u32(f));
    const uint32_t in_dim = read_u32(f);
    const uint8_t act = uint8_t(f.get());
    const uint8_t offs = uint8_t(f.get());
    read_u16(f);
    cfg.activation = act == 0 ? Activation::kSilu : Activation::kIdentity;
    cfg.offset_channel = offs != 0;
    cfg.resolution = read_f64(f);
    cfg.truncation = read_f64(f);
    if (uint32_t(cfg.input_dim()) != in_dim) {
      throw std::runtime_error("NeuralMap::load: inconsistent decoder input dim");
    }
    NeuralMap map(cfg);
    map.positions_.resize(n);
    map.features_.resize(n);
    map.created_.resize(n);
    map.stability_.resize(n);
    for (uint64_t i = 0; i < n; ++i) {
      map.positions_[i].x() = read_f64(f);
      map.positions_[i].y() = read_f64(f);
      map.positions_[i].z() = read_f64(f);
    }
    for (uint64_t i = 0; i < n; ++i) {
      map.features_[i].resize(cfg.feature_dim);
      for (int j = 0; j < cfg.feature_dim; ++j) map.features_[i][j] = read_f64(f);
    }
    for (uint64_t i = 0; i < n; ++i) map.created_[i] = read_i32(f);
    for (uint64_t i = 0; i < n; ++i) map.stability_[i] = read_f64(f);
    read_tensor(f, map.decoder_.w1());
    read_tensor(f, map.decoder_.b1());
    read_tensor(f, map.decoder_.w2());
    read_tensor(f, map.decoder_.b2());
    read_tensor(f, map.decoder_.w3());
    map.decoder_.b3() = read_f64(f);
    if (!f) throw std::runtime_error("NeuralMap::load: truncated file " + path);
    for (uint64_t i = 0; i < n; ++i) map.index_.add(map.positions_[i]);
    for (int c : map.created_) {
      if (c > map.latest_frame_) map.latest_frame_ = c;
    }
    return map;
  }

 private:
  static void write_u16(std::ostream& f, uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }
  static void write_u32(std::ostream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
  static void write_u64(std::ostream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
  static void write_i32(std::ostream& f, int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
  static void write_f64(std::ostream& f, double v) { f.write(reinterpret_cast<const char*>(&v), 8); }
  static uint16_t read_u16(std::istream& f) { uint16_t v = 0; f.read(reinterpret_cast<char*>(&v), 2); return v; }
  static uint32_t read_u32(std::istream& f) { uint32_t v = 0; f.read(reinterpret_cast<char*>(&v), 4); return v; }
  static uint64_t read_u64(std::istream& f) { uint64_t v = 0; f.read(reinterpret_cast<char*>(&v), 8); return v; }
  static int32_t read_i32(std::istream& f) { int32_t v = 0; f.read(reinterpret_cast<char*>(&v), 4); return v; }
  static double read_f64(std::istream& f) { double v = 0; f.read(reinterpret_cast<char*>(&v), 8); return v; }

  template <typename M>
  static void write_tensor(std::ostream& f, const M& m) {
    f.write(reinterpret_cast<const char*>(m.data()), std::streamsize(sizeof(double) * m.size()));
  }
  template <typename M>
  static void read_tensor(std::istream& f, M& m) {
    f.read(reinterpret_cast<char*>(m.data()), std::streamsize(sizeof(double) * m.size()));
  }

  MapConfig cfg_;
  std::vector<Vec3> positions_;
  std::vector<Eigen::VectorXd> features_;
  std::vector<int> created_;
  std::vector<double> stability_;
  IncrementalIndex index_;
  SdfDecoder decoder_;
  int latest_frame_ = -1;
};

}  // namespace knlio
