#pragma once

#include <optional>

#include "avs/geometry.hpp"
#include "avs/image.hpp"

namespace avs {

struct CameraIntrinsics {
  double fx = 64, fy = 64;
  double cx = 32, cy = 32;
  int width = 64, height = 64;
  double near = 0.1;
};

// Pinhole camera; rotation/translation map world to camera space
// (x_cam = R * x_world + t). gt_image is present only where the pipeline
// is allowed to see the real capture.
struct CameraView {
  int id = 0;
  Mat3 rotation;
  Vec3 translation;
  CameraIntrinsics intrinsics;
  std::optional<ImageF> gt_image;

  Vec3 position() const { return -(rotation.transpose() * translation); }

  CameraView without_gt() const {
    CameraView v = *this;
    v.gt_image.reset();
    return v;
  }
};

}  // namespace avs
