#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "avs/camera.hpp"
#include "avs/rng.hpp"
#include "avs/splat.hpp"

namespace avs {

struct ReconConfig {
  int total_iters = 3000;
  double lr_position = 2e-3;
  double lr_scale = 5e-3;
  double lr_color = 5e-3;
  double lr_opacity = 5e-3;
  double lambda_ssim = 0.2;
  int n_init_splats = 500;
  Box3 init_bounds{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
  uint64_t seed = 0;
  std::array<float, 3> background = default_background();
};

struct OptimState {
  GaussianCloud cloud;
  CloudGradients first_moment;
  CloudGradients second_moment;
  int64_t step = 0;
};

// View-addition checkpoints: the 30k-iteration reference schedule scaled to
// total_iters, deduplicated, restricted to [1, total_iters).
std::vector<int> schedule_points(int total_iters);

// loss = (1 - lambda) * mean|r - g| + lambda * (1 - meanSSIM(r, g)).
// The gradient is w.r.t. the rendered image, laid out like its data.
std::pair<double, std::vector<double>> loss_and_grad(const ImageF& render_rgb,
                                                     const ImageF& gt, double lambda_ssim);

OptimState init_state(const ReconConfig& config);

// Runs `iters` Adam steps, one training view per step (seeded round-robin
// shuffle drawn from `rng`). The state advances in place.
void fit(OptimState& state, std::span<const CameraView> views, const ReconConfig& config,
         int iters, Rng& rng);

uint64_t recon_config_hash(const ReconConfig& config);
void save_checkpoint(const OptimState& state, const ReconConfig& config,
                     const std::string& path);
OptimState load_checkpoint(const std::string& path);

}  // namespace avs
