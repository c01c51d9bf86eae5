#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "avs/camera.hpp"
#include "avs/image.hpp"

namespace avs {

// Isotropic 3D Gaussian splats. Activations: color/opacity through sigmoid,
// scale through exp, so every stored parameter is unconstrained.
struct GaussianCloud {
  std::vector<float> positions;       // N*3
  std::vector<float> log_scales;      // N
  std::vector<float> color_logits;    // N*3
  std::vector<float> opacity_logits;  // N

  size_t size() const { return log_scales.size(); }
  void resize(size_t n) {
    positions.resize(n * 3);
    log_scales.resize(n);
    color_logits.resize(n * 3);
    opacity_logits.resize(n);
  }
};

struct CloudGradients {
  std::vector<float> positions;
  std::vector<float> log_scales;
  std::vector<float> color_logits;
  std::vector<float> opacity_logits;

  static CloudGradients zeros_like(const GaussianCloud& c) {
    CloudGradients g;
    g.positions.assign(c.positions.size(), 0.0f);
    g.log_scales.assign(c.log_scales.size(), 0.0f);
    g.color_logits.assign(c.color_logits.size(), 0.0f);
    g.opacity_logits.assign(c.opacity_logits.size(), 0.0f);
    return g;
  }
};

struct RenderOutput {
  ImageF rgb;    // 3 channels, [0,1]
  ImageF depth;  // 1 channel, scene units, 0 where alpha = 0
  ImageF alpha;  // 1 channel, [0,1]
};

// Full-precision render buffers; the float RenderOutput is quantized from
// these. Exposed so gradient checks can difference an exact scalar loss.
struct RenderBuffers {
  int height = 0, width = 0;
  std::vector<double> rgb;    // h*w*3
  std::vector<double> depth;  // h*w
  std::vector<double> alpha;  // h*w
};

struct Projection {
  double u = 0, v = 0;
  double depth = 0;
  double sigma2d = 0;
};

std::array<float, 3> default_background();

// Pinhole projection of one splat center; nullopt when the center falls at
// or behind the near plane.
std::optional<Projection> project(const Vec3& position, double log_scale,
                                  const CameraView& view);

RenderBuffers render_raw(const GaussianCloud& cloud, const CameraView& view,
                         const std::array<float, 3>& background);

RenderOutput render(const GaussianCloud& cloud, const CameraView& view,
                    const std::array<float, 3>& background = default_background());

// Analytic gradients of sum(upstream * rgb) w.r.t. every cloud parameter.
// upstream has the render's h*w*3 layout. Culled and cutoff splats get zero.
CloudGradients render_backward(const GaussianCloud& cloud, const CameraView& view,
                               const std::array<float, 3>& background,
                               const std::vector<double>& upstream);

std::vector<NamedTensor> cloud_to_tensors(const GaussianCloud& cloud);
GaussianCloud cloud_from_tensors(const std::vector<NamedTensor>& tensors);
void save_cloud(const GaussianCloud& cloud, const std::string& path);
GaussianCloud load_cloud(const std::string& path);

}  // namespace avs
