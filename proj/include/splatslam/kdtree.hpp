#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <vector>

namespace splat {

// Minimal 3D kd-tree over a fixed point set. Supports nearest and k-nearest
// queries; validated against a brute-force oracle in tests.
class KdTree3 {
 public:
  explicit KdTree3(std::vector<Eigen::Vector3d> points)
      : points_(std::move(points)) {
    indices_.resize(points_.size());
    std::iota(indices_.begin(), indices_.end(), 0);
    if (!points_.empty()) build(0, points_.size(), 0);
  }

  size_t size() const { return points_.size(); }

  // Index and squared distance of the nearest point.
  std::pair<size_t, double> nearest(const Eigen::Vector3d& q) const {
    size_t best = 0;
    double best_d2 = std::numeric_limits<double>::max();
    nearest_rec(q, 0, points_.size(), 0, best, best_d2);
    return {best, best_d2};
  }

  // Indices and squared distances of the k nearest points, ascending.
  std::vector<std::pair<size_t, double>> knearest(const Eigen::Vector3d& q,
                                                  size_t k) const {
    Heap heap;
    knearest_rec(q, 0, points_.size(), 0, k, heap);
    std::vector<std::pair<size_t, double>> out;
    out.reserve(heap.size());
    while (!heap.empty()) {
      out.push_back({heap.top().second, heap.top().first});
      heap.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  const Eigen::Vector3d& point(size_t i) const { return points_[i]; }

 private:
  using Heap = std::priority_queue<std::pair<double, size_t>>;

  void build(size_t lo, size_t hi, int axis) {
    if (hi - lo <= 1) return;
    const size_t mid = (lo + hi) / 2;
    std::nth_element(indices_.begin() + lo, indices_.begin() + mid,
                     indices_.begin() + hi, [&](size_t a, size_t b) {
                       return points_[a][axis] < points_[b][axis];
                     });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void nearest_rec(const Eigen::Vector3d& q, size_t lo, size_t hi, int axis,
                   size_t& best, double& best_d2) const {
    if (lo >= hi) return;
    const size_t mid = (lo + hi) / 2;
    const size_t idx = indices_[mid];
    const double d2 = (points_[idx] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = idx;
    }
    const double delta = q[axis] - points_[idx][axis];
    const int next = (axis + 1) % 3;
    if (delta < 0) {
      nearest_rec(q, lo, mid, next, best, best_d2);
      if (delta * delta < best_d2) nearest_rec(q, mid + 1, hi, next, best, best_d2);
    } else {
      nearest_rec(q, mid + 1, hi, next, best, best_d2);
      if (delta * delta < best_d2) nearest_rec(q, lo, mid, next, best, best_d2);
    }
  }

  void knearest_rec(const Eigen::Vector3d& q, size_t lo, size_t hi, int axis,
                    size_t k, Heap& heap) const {
    if (lo >= hi) return;
    const size_t mid = (lo + hi) / 2;
    const size_t idx = indices_[mid];
    const double d2 = (points_[idx] - q).squaredNorm();
    if (heap.size() < k) {
      heap.push({d2, idx});
    } else if (d2 < heap.top().first) {
      heap.pop();
      heap.push({d2, idx});
    }
    const double delta = q[axis] - points_[idx][axis];
    const int next = (axis + 1) % 3;
    const auto worst = [&] {
      return heap.size() < k ? std::numeric_limits<double>::max()
                             : heap.top().first;
    };
    if (delta < 0) {
      knearest_rec(q, lo, mid, next, k, heap);
      if (delta * delta < worst()) knearest_rec(q, mid + 1, hi, next, k, heap);
    } else {
      knearest_rec(q, mid + 1, hi, next, k, heap);
      if (delta * delta < worst()) knearest_rec(q, lo, mid, next, k, heap);
    }
  }

  std::vector<Eigen::Vector3d> points_;
  std::vector<size_t> indices_;
};

}  // namespace splat
