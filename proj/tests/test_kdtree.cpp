#include <random>

#include "doctest.h"
#include "splatslam/kdtree.hpp"

using namespace splat;
using Eigen::Vector3d;

TEST_CASE("kd-tree matches brute force nearest and knn") {
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<Vector3d> pts(800);
  for (auto& p : pts) p = Vector3d(u(rng), u(rng), u(rng));
  const KdTree3 tree(pts);

  for (int q = 0; q < 200; ++q) {
    const Vector3d query(u(rng), u(rng), u(rng));

    size_t best = 0;
    double best_d2 = 1e300;
    for (size_t i = 0; i < pts.size(); ++i) {
      const double d2 = (pts[i] - query).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    const auto [idx, d2] = tree.nearest(query);
    CHECK(idx == best);
    CHECK(d2 == doctest::Approx(best_d2).epsilon(1e-12));

    std::vector<double> all;
    for (const auto& p : pts) all.push_back((p - query).squaredNorm());
    std::sort(all.begin(), all.end());
    const auto knn = tree.knearest(query, 5);
    REQUIRE(knn.size() == 5);
    for (int k = 0; k < 5; ++k)
      CHECK(knn[k].second == doctest::Approx(all[k]).epsilon(1e-12));
  }
}

TEST_CASE("knn with k larger than the set") {
  std::vector<Vector3d> pts = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  const KdTree3 tree(pts);
  const auto knn = tree.knearest(Vector3d(0.1, 0, 0), 10);
  CHECK(knn.size() == 3);
  CHECK(knn[0].first == 0);
}
