#pragma once

#include <string>
#include <vector>

#include "avs/camera.hpp"
#include "avs/splat.hpp"

namespace avs {

struct PointCloud {
  std::vector<double> points;  // N*3
  size_t size() const { return points.size() / 3; }
};

struct CoverageReport {
  double scr_percent = 0.0;
  double fscore_mean = 0.0;
  std::vector<double> fscore_per_threshold;
  std::vector<double> thresholds;
  double depth_mae = -1.0;  // -1 when not evaluated
  bool absolute_thresholds = false;
};

// Splat means with sigmoid(opacity) >= opacity_min; errors when empty.
PointCloud cloud_to_points(const GaussianCloud& cloud, double opacity_min = 0.5);

// Exact kd-tree; distances match brute force bit for bit.
class KdTree3 {
 public:
  explicit KdTree3(const PointCloud& points);
  double nn_dist(double x, double y, double z) const;

 private:
  struct Node {
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range
    int axis = -1;
    double split = 0.0;
  };
  std::vector<Node> nodes_;
  std::vector<double> pts_;  // reordered N*3
  int build(int begin, int end, std::vector<int>& index, const std::vector<double>& raw);
  void search(int node, const double* q, double& best2) const;
};

std::vector<double> nn_distances(const PointCloud& from, const PointCloud& to);

double scene_extent(const PointCloud& reference);

double scr(const PointCloud& reference, const PointCloud& subset, double tau_rel = 0.01,
           bool absolute = false);

struct FScoreResult {
  std::vector<double> per_threshold;
  double mean = 0.0;
};

FScoreResult fscore(const PointCloud& reference, const PointCloud& subset,
                    const std::vector<double>& thresholds_rel = {0.001, 0.01, 0.1},
                    bool absolute = false);

struct DepthMaeConfig {
  int n_poses = 100;
  uint64_t seed = 0;
  double radius = 2.5;
  CameraIntrinsics intrinsics;
  std::array<float, 3> background = default_background();
};

// Depth MAE over seeded sphere poses, masked to pixels both models cover
// (alpha > 0.5).
double depth_mae(const GaussianCloud& reference, const GaussianCloud& subset,
                 const DepthMaeConfig& cfg);

CoverageReport coverage_report(const PointCloud& reference, const PointCloud& subset,
                               double scr_tau_rel, const std::vector<double>& f_thresholds,
                               bool absolute);

// "x y z d" per reference point for error-heatmap visualization.
void save_nn_heatmap(const PointCloud& reference, const std::vector<double>& distances,
                     const std::string& path);

}  // namespace avs
