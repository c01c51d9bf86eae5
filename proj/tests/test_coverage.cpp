#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "avs/coverage.hpp"
#include "avs/scene.hpp"
#include "oracles.hpp"

using namespace avs;

namespace {

PointCloud random_points(size_t n, uint64_t seed, double spread = 1.0) {
  PointCloud pc;
  Rng rng(seed);
  pc.points.resize(3 * n);
  for (auto& v : pc.points) v = rng.uniform(-spread, spread);
  return pc;
}

PointCloud cube_corners() {
  PointCloud pc;
  for (int i = 0; i < 8; ++i) {
    pc.points.push_back(i & 1 ? 1.0 : 0.0);
    pc.points.push_back(i & 2 ? 1.0 : 0.0);
    pc.points.push_back(i & 4 ? 1.0 : 0.0);
  }
  return pc;
}

}  // namespace

TEST_CASE("cloud_to_points filters by opacity") {
  GaussianCloud cloud;
  cloud.resize(4);
  for (int i = 0; i < 4; ++i) {
    cloud.positions[3 * i] = static_cast<float>(i);
    cloud.opacity_logits[i] = i < 2 ? 2.0f : -2.0f;  // 0.88, 0.12
  }
  PointCloud pc = cloud_to_points(cloud, 0.5);
  CHECK(pc.size() == 2);
  CHECK(pc.points[0] == 0.0);
  CHECK(pc.points[3] == 1.0);

  for (int i = 0; i < 4; ++i) cloud.opacity_logits[i] = -3.0f;
  CHECK_THROWS(cloud_to_points(cloud, 0.5));

  for (int i = 0; i < 4; ++i) cloud.opacity_logits[i] = 2.2f;
  CHECK(cloud_to_points(cloud, 0.5).size() == 4);
}

TEST_CASE("nn_distances: identity and rigid shift") {
  PointCloud pc = cube_corners();
  auto zeros = nn_distances(pc, pc);
  for (double d : zeros) CHECK(d == 0.0);

  PointCloud shifted = pc;
  for (size_t i = 0; i < shifted.size(); ++i) shifted.points[3 * i] += 0.1;
  auto d = nn_distances(shifted, pc);
  for (double v : d) CHECK(v == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("kd-tree equals brute force on random instances") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    PointCloud a = random_points(2000, 1000 + seed);
    PointCloud b = random_points(2000, 2000 + seed);
    auto fast = nn_distances(a, b);
    auto slow = oracles::brute_nn(a.points, b.points);
    std::sort(fast.begin(), fast.end());
    std::sort(slow.begin(), slow.end());
    REQUIRE(fast.size() == slow.size());
    for (size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == slow[i]);
  }
}

TEST_CASE("nn_distances rejects empty clouds") {
  PointCloud a = cube_corners(), empty;
  CHECK_THROWS(nn_distances(a, empty));
  CHECK_THROWS(nn_distances(empty, a));
}

TEST_CASE("scr: identity, missing corners, monotonicity") {
  PointCloud ref = cube_corners();
  CHECK(scr(ref, ref) == 100.0);

  PointCloud half;
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 3; ++d) half.points.push_back(ref.points[3 * i + d]);
  CHECK(scr(ref, half) == 50.0);  // tau = 0.01*sqrt(3), misses are at distance 1

  // adding points never lowers coverage
  PointCloud grow = half;
  double prev = scr(ref, grow);
  for (int i = 4; i < 8; ++i) {
    for (int d = 0; d < 3; ++d) grow.points.push_back(ref.points[3 * i + d]);
    double cur = scr(ref, grow);
    CHECK(cur >= prev);
    prev = cur;
  }
  CHECK(prev == 100.0);
}

TEST_CASE("scr rejects degenerate references") {
  PointCloud degenerate;
  degenerate.points = {1, 1, 1, 1, 1, 1};
  PointCloud other = cube_corners();
  CHECK_THROWS(scr(degenerate, other));
  CHECK(scr(degenerate, other, 5.0, true) >= 0.0);  // absolute mode has no extent
}

TEST_CASE("fscore: identity, disjoint, brute-force match") {
  PointCloud ref = cube_corners();
  FScoreResult ident = fscore(ref, ref);
  CHECK(ident.per_threshold.size() == 3);
  for (double f : ident.per_threshold) CHECK(f == 1.0);
  CHECK(ident.mean == 1.0);

  PointCloud far = cube_corners();
  for (auto& v : far.points) v += 30.0;  // 10x extent away
  FScoreResult zero = fscore(ref, far);
  for (double f : zero.per_threshold) CHECK(f == 0.0);

  for (uint64_t seed = 0; seed < 5; ++seed) {
    PointCloud a = random_points(50, 300 + seed);
    PointCloud b = random_points(40, 400 + seed);
    FScoreResult f = fscore(a, b);
    double extent = scene_extent(a);
    auto d_ba = oracles::brute_nn(b.points, a.points);
    auto d_ab = oracles::brute_nn(a.points, b.points);
    std::vector<double> expect;
    for (double t_rel : {0.001, 0.01, 0.1}) {
      double t = t_rel * extent;
      double p = 0, r = 0;
      for (double v : d_ba)
        if (v <= t) p += 1;
      for (double v : d_ab)
        if (v <= t) r += 1;
      p /= static_cast<double>(d_ba.size());
      r /= static_cast<double>(d_ab.size());
      expect.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
    }
    for (int i = 0; i < 3; ++i)
      CHECK(f.per_threshold[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("metrics are invariant under a shared rigid transform") {
  PointCloud a = random_points(200, 77);
  PointCloud b = random_points(150, 78);
  double s0 = scr(a, b);
  double f0 = fscore(a, b).mean;

  // rotate about z by 0.7 rad and translate
  double c = std::cos(0.7), s = std::sin(0.7);
  auto xf = [&](PointCloud& pc) {
    for (size_t i = 0; i < pc.size(); ++i) {
      double x = pc.points[3 * i], y = pc.points[3 * i + 1];
      pc.points[3 * i] = c * x - s * y + 5.0;
      pc.points[3 * i + 1] = s * x + c * y - 2.0;
      pc.points[3 * i + 2] += 1.0;
    }
  };
  xf(a);
  xf(b);
  CHECK(scr(a, b) == doctest::Approx(s0).epsilon(1e-9));
  CHECK(fscore(a, b).mean == doctest::Approx(f0).epsilon(1e-9));
}

TEST_CASE("depth_mae: identical models give exactly zero") {
  SceneSpec spec;
  spec.seed = 3;
  spec.n_splats = 80;
  GaussianCloud cloud = generate_scene(spec);
  DepthMaeConfig cfg;
  cfg.n_poses = 10;
  cfg.seed = 4;
  CHECK(depth_mae(cloud, cloud, cfg) == 0.0);
}

TEST_CASE("depth_mae detects geometric perturbation") {
  SceneSpec spec;
  spec.seed = 6;
  spec.n_splats = 80;
  GaussianCloud cloud = generate_scene(spec);
  GaussianCloud moved = cloud;
  for (size_t i = 0; i < moved.size(); ++i) moved.positions[3 * i + 2] += 0.15f;
  DepthMaeConfig cfg;
  cfg.n_poses = 10;
  cfg.seed = 4;
  CHECK(depth_mae(cloud, moved, cfg) > 0.0);
}

TEST_CASE("heatmap export writes x y z d lines") {
  PointCloud ref = cube_corners();
  auto d = nn_distances(ref, ref);
  save_nn_heatmap(ref, d, "test_tmp_heatmap.txt");
  std::ifstream in("test_tmp_heatmap.txt");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    double x, y, z, dist;
    REQUIRE(std::sscanf(line.c_str(), "%lf %lf %lf %lf", &x, &y, &z, &dist) == 4);
    CHECK(dist == 0.0);
    ++lines;
  }
  CHECK(lines == 8);
}
