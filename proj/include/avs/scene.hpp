#pragma once

#include <string>
#include <utility>
#include <vector>

#include "avs/camera.hpp"
#include "avs/splat.hpp"

namespace avs {

enum class RigKind { sphere, orbit };

struct SceneSpec {
  uint64_t seed = 0;
  int n_splats = 300;
  Box3 bounds{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
  int palette = 0;  // 0: uniform rgb, 1: saturated hues, 2: two-tone
  double log_scale_min = std::log(0.02);
  double log_scale_max = std::log(0.075);
};

// Ground-truth cloud; pure function of the spec (counter-based streams).
GaussianCloud generate_scene(const SceneSpec& spec);

// Cameras on a Fibonacci sphere or a uniform orbit of the given radius
// around `center`, all aimed at the center. The seed only rotates the
// layout, so rigs for different scenes are decorrelated.
std::vector<CameraView> generate_rig(RigKind kind, int n, double radius, Vec3 center,
                                     const CameraIntrinsics& intrinsics, uint64_t seed);

// Fills gt_image by rendering the ground-truth cloud; these renders are the
// "real captures" of the synthetic world.
void render_gt(const GaussianCloud& cloud, std::vector<CameraView>& views);

std::pair<std::vector<CameraView>, std::vector<CameraView>> split_pool(
    const std::vector<CameraView>& views, int n_test, uint64_t seed);

struct SceneBundle {
  GaussianCloud gt_cloud;
  std::vector<CameraView> train_pool;  // candidates + future initial views
  std::vector<CameraView> test_views;
};

struct SceneBundleConfig {
  SceneSpec spec;
  RigKind rig_kind = RigKind::sphere;
  int rig_n = 60;
  double rig_radius = 2.5;
  CameraIntrinsics intrinsics;
  int n_test = 20;
};

SceneBundle make_scene_bundle(const SceneBundleConfig& cfg);

void save_scene_dir(const SceneBundle& bundle, const std::string& dir);

}  // namespace avs
