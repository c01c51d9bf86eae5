#include "avs/coverage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "avs/geometry.hpp"
#include "avs/rng.hpp"

namespace avs {

PointCloud cloud_to_points(const GaussianCloud& cloud, double opacity_min) {
  PointCloud pc;
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (sigmoid(cloud.opacity_logits[i]) < opacity_min) continue;
    pc.points.push_back(cloud.positions[3 * i]);
    pc.points.push_back(cloud.positions[3 * i + 1]);
    pc.points.push_back(cloud.positions[3 * i + 2]);
  }
  if (pc.points.empty())
    throw std::runtime_error("cloud_to_points: no splat passes the opacity threshold");
  return pc;
}

KdTree3::KdTree3(const PointCloud& points) {
  if (points.size() == 0) throw std::runtime_error("KdTree3: empty point cloud");
  std::vector<int> index(points.size());
  std::iota(index.begin(), index.end(), 0);
  nodes_.reserve(2 * points.size() / 8 + 8);
  pts_.resize(points.points.size());
  build(0, static_cast<int>(points.size()), index, points.points);
  // materialize reordered points
  for (size_t i = 0; i < index.size(); ++i)
    for (int d = 0; d < 3; ++d) pts_[3 * i + d] = points.points[3 * static_cast<size_t>(index[i]) + d];
}

int KdTree3::build(int begin, int end, std::vector<int>& index, const std::vector<double>& raw) {
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  if (end - begin <= 8) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  // split on the axis with the largest spread
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (int i = begin; i < end; ++i)
    for (int d = 0; d < 3; ++d) {
      double v = raw[3 * static_cast<size_t>(index[i]) + d];
      lo[d] = std::min(lo[d], v);
      hi[d] = std::max(hi[d], v);
    }
  int axis = 0;
  for (int d = 1; d < 3; ++d)
    if (hi[d] - lo[d] > hi[axis] - lo[axis]) axis = d;
  int mid = (begin + end) / 2;
  std::nth_element(index.begin() + begin, index.begin() + mid, index.begin() + end,
                   [&](int a, int b) {
                     return raw[3 * static_cast<size_t>(a) + axis] <
                            raw[3 * static_cast<size_t>(b) + axis];
                   });
  double split = raw[3 * static_cast<size_t>(index[mid]) + axis];
  int left = build(begin, mid, index, raw);
  int right = build(mid, end, index, raw);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree3::search(int node, const double* q, double& best2) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      double dx = pts_[3 * static_cast<size_t>(i)] - q[0];
      double dy = pts_[3 * static_cast<size_t>(i) + 1] - q[1];
      double dz = pts_[3 * static_cast<size_t>(i) + 2] - q[2];
      double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best2) best2 = d2;
    }
    return;
  }
  double diff = q[n.axis] - n.split;
  int near = diff < 0 ? n.left : n.right;
  int far = diff < 0 ? n.right : n.left;
  search(near, q, best2);
  if (diff * diff < best2) search(far, q, best2);
}

double KdTree3::nn_dist(double x, double y, double z) const {
  double q[3] = {x, y, z};
  double best2 = std::numeric_limits<double>::infinity();
  search(0, q, best2);
  return std::sqrt(best2);
}

std::vector<double> nn_distances(const PointCloud& from, const PointCloud& to) {
  if (from.size() == 0 || to.size() == 0)
    throw std::runtime_error("nn_distances: empty point cloud");
  KdTree3 tree(to);
  std::vector<double> out(from.size());
  for (size_t i = 0; i < from.size(); ++i)
    out[i] = tree.nn_dist(from.points[3 * i], from.points[3 * i + 1], from.points[3 * i + 2]);
  return out;
}

double scene_extent(const PointCloud& reference) {
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (size_t i = 0; i < reference.size(); ++i)
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], reference.points[3 * i + d]);
      hi[d] = std::max(hi[d], reference.points[3 * i + d]);
    }
  double s = 0.0;
  for (int d = 0; d < 3; ++d) s += (hi[d] - lo[d]) * (hi[d] - lo[d]);
  return std::sqrt(s);
}

double scr(const PointCloud& reference, const PointCloud& subset, double tau_rel,
           bool absolute) {
  double tau = tau_rel;
  if (!absolute) {
    double extent = scene_extent(reference);
    if (extent <= 0.0) throw std::runtime_error("scr: degenerate reference extent");
    tau = tau_rel * extent;
  }
  auto d = nn_distances(reference, subset);
  size_t covered = 0;
  for (double v : d)
    if (v <= tau) ++covered;
  return 100.0 * static_cast<double>(covered) / static_cast<double>(d.size());
}

FScoreResult fscore(const PointCloud& reference, const PointCloud& subset,
                    const std::vector<double>& thresholds_rel, bool absolute) {
  double extent = 1.0;
  if (!absolute) {
    extent = scene_extent(reference);
    if (extent <= 0.0) throw std::runtime_error("fscore: degenerate reference extent");
  }
  auto d_sub_to_ref = nn_distances(subset, reference);   // precision side
  auto d_ref_to_sub = nn_distances(reference, subset);   // recall side
  FScoreResult result;
  for (double t_rel : thresholds_rel) {
    double t = t_rel * extent;
    size_t p_hit = 0, r_hit = 0;
    for (double v : d_sub_to_ref)
      if (v <= t) ++p_hit;
    for (double v : d_ref_to_sub)
      if (v <= t) ++r_hit;
    double precision = static_cast<double>(p_hit) / static_cast<double>(d_sub_to_ref.size());
    double recall = static_cast<double>(r_hit) / static_cast<double>(d_ref_to_sub.size());
    double f = (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
    result.per_threshold.push_back(f);
  }
  for (double f : result.per_threshold) result.mean += f;
  result.mean /= static_cast<double>(result.per_threshold.size());
  return result;
}

double depth_mae(const GaussianCloud& reference, const GaussianCloud& subset,
                 const DepthMaeConfig& cfg) {
  Rng rng = Rng::substream(cfg.seed, 0xdeb7);
  double total = 0.0;
  int used_poses = 0;
  for (int p = 0; p < cfg.n_poses; ++p) {
    double z = rng.uniform(-0.95, 0.95);
    double a = rng.next_double() * 6.283185307179586477;
    double r = std::sqrt(1.0 - z * z);
    Vec3 pos{cfg.radius * r * std::cos(a), cfg.radius * r * std::sin(a), cfg.radius * z};
    Vec3 forward = (-pos).normalized();
    Vec3 up{0, 0, 1};
    if (std::abs(forward.dot(up)) > 0.999) up = {1, 0, 0};
    Vec3 right = forward.cross(up).normalized();
    Vec3 down = forward.cross(right);
    CameraView view;
    view.id = p;
    view.intrinsics = cfg.intrinsics;
    view.rotation = Mat3::from_rows(right, down, forward);
    view.translation = -(view.rotation * pos);

    RenderOutput ref = render(reference, view, cfg.background);
    RenderOutput sub = render(subset, view, cfg.background);
    double sum = 0.0;
    int count = 0;
    for (size_t i = 0; i < ref.depth.data.size(); ++i) {
      if (ref.alpha.data[i] > 0.5f && sub.alpha.data[i] > 0.5f) {
        sum += std::abs(static_cast<double>(ref.depth.data[i]) - sub.depth.data[i]);
        ++count;
      }
    }
    if (count > 0) {
      total += sum / count;
      ++used_poses;
    }
  }
  if (used_poses == 0) throw std::runtime_error("depth_mae: no mutually covered pixels");
  return total / used_poses;
}

CoverageReport coverage_report(const PointCloud& reference, const PointCloud& subset,
                               double scr_tau_rel, const std::vector<double>& f_thresholds,
                               bool absolute) {
  CoverageReport report;
  report.scr_percent = scr(reference, subset, scr_tau_rel, absolute);
  FScoreResult f = fscore(reference, subset, f_thresholds, absolute);
  report.fscore_per_threshold = f.per_threshold;
  report.fscore_mean = f.mean;
  report.thresholds = f_thresholds;
  report.absolute_thresholds = absolute;
  return report;
}

void save_nn_heatmap(const PointCloud& reference, const std::vector<double>& distances,
                     const std::string& path) {
  if (distances.size() != reference.size())
    throw std::runtime_error("save_nn_heatmap: size mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_nn_heatmap: cannot open " + path);
  char line[128];
  for (size_t i = 0; i < reference.size(); ++i) {
    std::snprintf(line, sizeof line, "%.9g %.9g %.9g %.9g\n", reference.points[3 * i],
                  reference.points[3 * i + 1], reference.points[3 * i + 2], distances[i]);
    out << line;
  }
}

}  // namespace avs
