#include "avs/splat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace avs {

namespace {

constexpr double kWeightClamp = 0.999;
constexpr double kCutoffSigmas = 3.0;
constexpr int kTile = 16;

struct VisibleSplat {
  int index;
  double u, v, depth, sigma2d;
  double opacity;       // sigmoid(opacity_logit)
  double color[3];      // sigmoid(color_logits)
};

struct TileLists {
  int tiles_x = 0, tiles_y = 0;
  // Per tile, indices into the depth-sorted visible array (in sorted order).
  std::vector<std::vector<int>> lists;
};

// Projects, culls, activates and depth-sorts the cloud for one view, then
// bins splats into pixel tiles so per-pixel walks stay short. The sorted
// order (depth, then original index) fixes the compositing order globally.
void prepare(const GaussianCloud& cloud, const CameraView& view,
             std::vector<VisibleSplat>& visible, TileLists& tiles) {
  const int W = view.intrinsics.width, H = view.intrinsics.height;
  visible.clear();
  visible.reserve(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    Vec3 p{cloud.positions[3 * i], cloud.positions[3 * i + 1], cloud.positions[3 * i + 2]};
    auto proj = project(p, cloud.log_scales[i], view);
    if (!proj) continue;
    VisibleSplat s;
    s.index = static_cast<int>(i);
    s.u = proj->u;
    s.v = proj->v;
    s.depth = proj->depth;
    s.sigma2d = proj->sigma2d;
    s.opacity = sigmoid(cloud.opacity_logits[i]);
    for (int c = 0; c < 3; ++c) s.color[c] = sigmoid(cloud.color_logits[3 * i + c]);
    visible.push_back(s);
  }
  std::sort(visible.begin(), visible.end(), [](const VisibleSplat& a, const VisibleSplat& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.index < b.index;
  });

  tiles.tiles_x = (W + kTile - 1) / kTile;
  tiles.tiles_y = (H + kTile - 1) / kTile;
  tiles.lists.assign(static_cast<size_t>(tiles.tiles_x) * tiles.tiles_y, {});
  for (int si = 0; si < static_cast<int>(visible.size()); ++si) {
    const VisibleSplat& s = visible[si];
    double r = kCutoffSigmas * s.sigma2d;
    int x0 = std::max(0, static_cast<int>(std::ceil(s.u - r)));
    int x1 = std::min(W - 1, static_cast<int>(std::floor(s.u + r)));
    int y0 = std::max(0, static_cast<int>(std::ceil(s.v - r)));
    int y1 = std::min(H - 1, static_cast<int>(std::floor(s.v + r)));
    if (x0 > x1 || y0 > y1) continue;
    for (int ty = y0 / kTile; ty <= y1 / kTile; ++ty)
      for (int tx = x0 / kTile; tx <= x1 / kTile; ++tx)
        tiles.lists[static_cast<size_t>(ty) * tiles.tiles_x + tx].push_back(si);
  }
}

}  // namespace

std::array<float, 3> default_background() { return {0.5f, 0.5f, 0.5f}; }

std::optional<Projection> project(const Vec3& position, double log_scale,
                                  const CameraView& view) {
  Vec3 pc = view.rotation * position + view.translation;
  if (pc.z <= view.intrinsics.near) return std::nullopt;
  Projection pr;
  pr.depth = pc.z;
  pr.u = view.intrinsics.fx * pc.x / pc.z + view.intrinsics.cx;
  pr.v = view.intrinsics.fy * pc.y / pc.z + view.intrinsics.cy;
  pr.sigma2d = std::exp(log_scale) * view.intrinsics.fx / pc.z;
  return pr;
}

RenderBuffers render_raw(const GaussianCloud& cloud, const CameraView& view,
                         const std::array<float, 3>& background) {
  const int W = view.intrinsics.width, H = view.intrinsics.height;
  RenderBuffers out;
  out.height = H;
  out.width = W;
  out.rgb.assign(static_cast<size_t>(H) * W * 3, 0.0);
  out.depth.assign(static_cast<size_t>(H) * W, 0.0);
  out.alpha.assign(static_cast<size_t>(H) * W, 0.0);

  std::vector<VisibleSplat> visible;
  TileLists tiles;
  prepare(cloud, view, visible, tiles);

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto& list = tiles.lists[static_cast<size_t>(y / kTile) * tiles.tiles_x + x / kTile];
      double T = 1.0;
      double rgb[3] = {0, 0, 0};
      double depth_acc = 0.0;
      for (int si : list) {
        const VisibleSplat& s = visible[si];
        double du = x - s.u, dv = y - s.v;
        double d2 = du * du + dv * dv;
        double r = kCutoffSigmas * s.sigma2d;
        if (d2 > r * r) continue;
        double g = std::exp(-d2 / (2.0 * s.sigma2d * s.sigma2d));
        double w = std::min(s.opacity * g, kWeightClamp);
        double wT = w * T;
        for (int c = 0; c < 3; ++c) rgb[c] += s.color[c] * wT;
        depth_acc += s.depth * wT;
        T *= 1.0 - w;
      }
      size_t px = static_cast<size_t>(y) * W + x;
      double alpha = 1.0 - T;
      for (int c = 0; c < 3; ++c) out.rgb[px * 3 + c] = rgb[c] + background[c] * T;
      out.alpha[px] = alpha;
      out.depth[px] = depth_acc / std::max(alpha, 1e-8);
    }
  }
  return out;
}

RenderOutput render(const GaussianCloud& cloud, const CameraView& view,
                    const std::array<float, 3>& background) {
  RenderBuffers raw = render_raw(cloud, view, background);
  RenderOutput out;
  out.rgb = ImageF(raw.height, raw.width, 3);
  out.depth = ImageF(raw.height, raw.width, 1);
  out.alpha = ImageF(raw.height, raw.width, 1);
  for (size_t i = 0; i < raw.rgb.size(); ++i)
    out.rgb.data[i] = static_cast<float>(std::clamp(raw.rgb[i], 0.0, 1.0));
  for (size_t i = 0; i < raw.depth.size(); ++i) {
    out.depth.data[i] = static_cast<float>(raw.depth[i]);
    out.alpha.data[i] = static_cast<float>(std::clamp(raw.alpha[i], 0.0, 1.0));
  }
  return out;
}

CloudGradients render_backward(const GaussianCloud& cloud, const CameraView& view,
                               const std::array<float, 3>& background,
                               const std::vector<double>& upstream) {
  const int W = view.intrinsics.width, H = view.intrinsics.height;
  if (upstream.size() != static_cast<size_t>(H) * W * 3)
    throw std::runtime_error("render_backward: upstream shape mismatch");

  CloudGradients grads = CloudGradients::zeros_like(cloud);
  std::vector<VisibleSplat> visible;
  TileLists tiles;
  prepare(cloud, view, visible, tiles);

  const size_t nvis = visible.size();
  // Per visible splat: d/du, d/dv, d/dsigma, d/ddepth-position chain pieces.
  std::vector<double> g_u(nvis, 0.0), g_v(nvis, 0.0), g_sigma(nvis, 0.0);

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto& list = tiles.lists[static_cast<size_t>(y / kTile) * tiles.tiles_x + x / kTile];
      if (list.empty()) continue;
      size_t px = static_cast<size_t>(y) * W + x;
      const double* up = &upstream[px * 3];
      if (up[0] == 0.0 && up[1] == 0.0 && up[2] == 0.0) continue;

      // First pass reproduces the forward composite for this pixel.
      double total[3];
      {
        double T = 1.0, acc[3] = {0, 0, 0};
        for (int si : list) {
          const VisibleSplat& s = visible[si];
          double du = x - s.u, dv = y - s.v;
          double d2 = du * du + dv * dv;
          double r = kCutoffSigmas * s.sigma2d;
          if (d2 > r * r) continue;
          double g = std::exp(-d2 / (2.0 * s.sigma2d * s.sigma2d));
          double w = std::min(s.opacity * g, kWeightClamp);
          for (int c = 0; c < 3; ++c) acc[c] += s.color[c] * w * T;
          T *= 1.0 - w;
        }
        for (int c = 0; c < 3; ++c) total[c] = acc[c] + background[c] * T;
      }

      // Second pass walks front-to-back: S_k (everything composited behind
      // splat k, including background) gives d rgb / d w_k directly.
      double T = 1.0;
      double prefix[3] = {0, 0, 0};
      for (int si : list) {
        const VisibleSplat& s = visible[si];
        double du = x - s.u, dv = y - s.v;
        double d2 = du * du + dv * dv;
        double r = kCutoffSigmas * s.sigma2d;
        if (d2 > r * r) continue;
        double sig2 = s.sigma2d * s.sigma2d;
        double g = std::exp(-d2 / (2.0 * sig2));
        double og = s.opacity * g;
        bool clamped = og > kWeightClamp;
        double w = clamped ? kWeightClamp : og;
        double wT = w * T;

        double dL_dw = 0.0;
        for (int c = 0; c < 3; ++c) {
          double contrib = s.color[c] * wT;
          prefix[c] += contrib;
          double S = total[c] - prefix[c];
          dL_dw += up[c] * (s.color[c] * T - S / (1.0 - w));
          // Color logit gradient: d rgb_c / d color_c = w*T.
          double dcol = up[c] * wT;
          grads.color_logits[3 * s.index + c] +=
              static_cast<float>(dcol * s.color[c] * (1.0 - s.color[c]));
        }
        T *= 1.0 - w;

        if (!clamped) {
          // w = opacity * exp(-d^2 / (2 sigma^2))
          double dL_dop = dL_dw * g;
          grads.opacity_logits[s.index] +=
              static_cast<float>(dL_dop * s.opacity * (1.0 - s.opacity));
          double dL_dg = dL_dw * s.opacity;
          double dL_dd2 = dL_dg * g * (-1.0 / (2.0 * sig2));
          g_u[si] += dL_dd2 * (-2.0 * du);
          g_v[si] += dL_dd2 * (-2.0 * dv);
          g_sigma[si] += dL_dg * g * d2 / (sig2 * s.sigma2d);
        }
      }
    }
  }

  // Chain screen-space gradients through the projection to world parameters.
  const auto& K = view.intrinsics;
  Mat3 Rt = view.rotation.transpose();
  for (size_t si = 0; si < nvis; ++si) {
    if (g_u[si] == 0.0 && g_v[si] == 0.0 && g_sigma[si] == 0.0) continue;
    const VisibleSplat& s = visible[si];
    int i = s.index;
    Vec3 p{cloud.positions[3 * i], cloud.positions[3 * i + 1], cloud.positions[3 * i + 2]};
    Vec3 pc = view.rotation * p + view.translation;
    double z = pc.z;

    // u = fx*xc/z + cx, v = fy*yc/z + cy, sigma = exp(s)*fx/z
    Vec3 d_cam;
    d_cam.x = g_u[si] * K.fx / z;
    d_cam.y = g_v[si] * K.fy / z;
    d_cam.z = -g_u[si] * K.fx * pc.x / (z * z) - g_v[si] * K.fy * pc.y / (z * z) -
              g_sigma[si] * s.sigma2d / z;

    Vec3 d_world = Rt * d_cam;
    grads.positions[3 * i] += static_cast<float>(d_world.x);
    grads.positions[3 * i + 1] += static_cast<float>(d_world.y);
    grads.positions[3 * i + 2] += static_cast<float>(d_world.z);
    grads.log_scales[i] += static_cast<float>(g_sigma[si] * s.sigma2d);
  }
  return grads;
}

std::vector<NamedTensor> cloud_to_tensors(const GaussianCloud& cloud) {
  uint32_t n = static_cast<uint32_t>(cloud.size());
  return {
      NamedTensor("positions", {n, 3}, cloud.positions),
      NamedTensor("log_scales", {n}, cloud.log_scales),
      NamedTensor("color_logits", {n, 3}, cloud.color_logits),
      NamedTensor("opacity_logits", {n}, cloud.opacity_logits),
  };
}

GaussianCloud cloud_from_tensors(const std::vector<NamedTensor>& tensors) {
  GaussianCloud cloud;
  bool seen[4] = {false, false, false, false};
  for (const auto& t : tensors) {
    if (t.name == "positions") { cloud.positions = t.data; seen[0] = true; }
    else if (t.name == "log_scales") { cloud.log_scales = t.data; seen[1] = true; }
    else if (t.name == "color_logits") { cloud.color_logits = t.data; seen[2] = true; }
    else if (t.name == "opacity_logits") { cloud.opacity_logits = t.data; seen[3] = true; }
  }
  if (!(seen[0] && seen[1] && seen[2] && seen[3]))
    throw std::runtime_error("cloud_from_tensors: missing cloud tensors");
  size_t n = cloud.log_scales.size();
  if (cloud.positions.size() != 3 * n || cloud.color_logits.size() != 3 * n ||
      cloud.opacity_logits.size() != n)
    throw std::runtime_error("cloud_from_tensors: inconsistent tensor shapes");
  return cloud;
}

void save_cloud(const GaussianCloud& cloud, const std::string& path) {
  save_tensors(cloud_to_tensors(cloud), path);
}

GaussianCloud load_cloud(const std::string& path) {
  return cloud_from_tensors(load_tensors(path));
}

}  // namespace avs
