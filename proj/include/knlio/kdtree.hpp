#pragma once

// Exact 3-d kd-tree with k-nearest and radius queries, plus an incremental
// wrapper that keeps a linear insertion buffer between rebuilds so queries
// stay exact while amortizing build cost.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "knlio/geometry.hpp"

namespace knlio {

struct Neighbor {
  int index = -1;
  double d2 = std::numeric_limits<double>::infinity();
};

class KdTree3 {
 public:
  KdTree3() = default;

  void build(const std::vector<Vec3>& pts) { build(pts, pts.size()); }

  void build(const std::vector<Vec3>& pts, size_t count) {
    pts_ = &pts;
    count_ = std::min(count, pts.size());
    order_.resize(count_);
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.clear();
    if (count_ > 0) {
      nodes_.reserve(2 * count_ / kLeafSize + 2);
      build_node(0, count_);
    }
  }

  size_t size() const { return count_; }

  // k nearest within max_radius, sorted by (distance, index).
  void knn(const Vec3& q, int k, double max_radius,
           std::vector<Neighbor>& out) const {
    out.clear();
    if (count_ == 0 || k <= 0) return;
    const double cap2 = max_radius * max_radius;
    search(0, q, k, cap2, out);
    std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.d2 != b.d2 ? a.d2 < b.d2 : a.index < b.index;
    });
  }

  void radius(const Vec3& q, double r, std::vector<Neighbor>& out) const {
    out.clear();
    if (count_ == 0) return;
    collect_radius(0, q, r * r, out);
  }

 private:
  static constexpr size_t kLeafSize = 8;

  struct Node {
    int axis = -1;       // -1 for leaf
    double split = 0.0;
    int left = -1, right = -1;
    uint32_t begin = 0, end = 0;  // into order_, leaves only
  };

  int build_node(size_t begin, size_t end) {
    const int id = int(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafSize) {
      nodes_[id].begin = uint32_t(begin);
      nodes_[id].end = uint32_t(end);
      return id;
    }
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (size_t i = begin; i < end; ++i) {
      const Vec3& p = (*pts_)[order_[i]];
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const size_t mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](int a, int b) {
                       return (*pts_)[a][axis] < (*pts_)[b][axis];
                     });
    nodes_[id].axis = axis;
    nodes_[id].split = (*pts_)[order_[mid]][axis];
    const int l = build_node(begin, mid);
    const int r = build_node(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void search(int id, const Vec3& q, int k, double cap2,
              std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (uint32_t i = n.begin; i < n.end; ++i) {
        const int idx = order_[i];
        const double d2 = ((*pts_)[idx] - q).squaredNorm();
        if (d2 > cap2) continue;
        if (int(heap.size()) < k) {
          heap.push_back({idx, d2});
          std::push_heap(heap.begin(), heap.end(), cmp);
        } else if (cmp(Neighbor{idx, d2}, heap.front())) {
          // lexicographic (d2, index) so ties resolve deterministically
          std::pop_heap(heap.begin(), heap.end(), cmp);
          heap.back() = {idx, d2};
          std::push_heap(heap.begin(), heap.end(), cmp);
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    search(near, q, k, cap2, heap);
    const double worst = int(heap.size()) < k
                             ? cap2
                             : std::min(cap2, heap.front().d2);
    if (diff * diff <= worst) search(far, q, k, cap2, heap);
  }

  void collect_radius(int id, const Vec3& q, double r2,
                      std::vector<Neighbor>& out) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (uint32_t i = n.begin; i < n.end; ++i) {
        const int idx = order_[i];
        const double d2 = ((*pts_)[idx] - q).squaredNorm();
        if (d2 <= r2) out.push_back({idx, d2});
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    collect_radius(near, q, r2, out);
    if (diff * diff <= r2) collect_radius(far, q, r2, out);
  }

  static bool cmp(const Neighbor& a, const Neighbor& b) {
    return a.d2 != b.d2 ? a.d2 < b.d2 : a.index < b.index;
  }

  const std::vector<Vec3>* pts_ = nullptr;
  size_t count_ = 0;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

// Tree over a prefix of the point store plus a linear scan of the tail.
// Rebuilds once the total grows past `growth` times the indexed prefix.
class IncrementalIndex {
 public:
  explicit IncrementalIndex(double growth = 1.2) : growth_(growth) {}

  const std::vector<Vec3>& points() const { return pts_; }
  size_t size() const { return pts_.size(); }

  int add(const Vec3& p) {
    pts_.push_back(p);
    // Every query scans the unindexed tail linearly, so cap it absolutely:
    // a relative threshold lets the tail reach O(n) and queries go quadratic.
    const size_t tail = pts_.size() - built_;
    if (pts_.size() >= kMinRebuild &&
        (tail >= kMaxTail ||
         double(pts_.size()) >= growth_ * double(std::max<size_t>(1, built_)))) {
      rebuild();
    }
    return int(pts_.size()) - 1;
  }

  void rebuild() {
    tree_.build(pts_, pts_.size());
    built_ = pts_.size();
  }

  void knn(const Vec3& q, int k, double max_radius,
           std::vector<Neighbor>& out) const {
    tree_.knn(q, k, max_radius, out);
    const double cap2 = max_radius * max_radius;
    for (size_t i = built_; i < pts_.size(); ++i) {
      const double d2 = (pts_[i] - q).squaredNorm();
      if (d2 <= cap2) out.push_back({int(i), d2});
    }
    std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.d2 != b.d2 ? a.d2 < b.d2 : a.index < b.index;
    });
    if (int(out.size()) > k) out.resize(k);
  }

  // True if any stored point lies within `r` of q.
  bool has_within(const Vec3& q, double r, int* index_out = nullptr) const {
    std::vector<Neighbor> nn;
    knn(q, 1, r, nn);
    if (nn.empty()) return false;
    if (index_out) *index_out = nn.front().index;
    return true;
  }

 private:
  static constexpr size_t kMinRebuild = 64;
  static constexpr size_t kMaxTail = 512;

  std::vector<Vec3> pts_;
  KdTree3 tree_;
  size_t built_ = 0;
  double growth_;
};

}  // namespace knlio
