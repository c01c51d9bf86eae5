#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avs/scene.hpp"
#include "avs/splat.hpp"
#include "oracles.hpp"

using namespace avs;

namespace {

CameraView identity_camera(double fx = 100, double cx = 64, int side = 128) {
  CameraView v;
  v.id = 0;
  v.rotation = Mat3::identity();
  v.translation = {0, 0, 0};
  v.intrinsics = {fx, fx, cx, cx, side, side, 0.1};
  return v;
}

GaussianCloud single_splat(Vec3 pos, double log_scale, double color_logit, double op_logit) {
  GaussianCloud c;
  c.resize(1);
  c.positions = {static_cast<float>(pos.x), static_cast<float>(pos.y),
                 static_cast<float>(pos.z)};
  c.log_scales = {static_cast<float>(log_scale)};
  c.color_logits = {static_cast<float>(color_logit), static_cast<float>(color_logit),
                    static_cast<float>(color_logit)};
  c.opacity_logits = {static_cast<float>(op_logit)};
  return c;
}

// Scene whose 3-sigma footprints cover the whole image: the cutoff circle
// never crosses a pixel, so finite differences see a smooth function.
GaussianCloud fd_scene(int n, uint64_t seed) {
  GaussianCloud c;
  c.resize(static_cast<size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    c.positions[3 * i] = static_cast<float>(rng.uniform(-0.2, 0.2));
    c.positions[3 * i + 1] = static_cast<float>(rng.uniform(-0.2, 0.2));
    c.positions[3 * i + 2] = static_cast<float>(rng.uniform(-0.2, 0.2));
    c.log_scales[i] = static_cast<float>(rng.uniform(std::log(1.3), std::log(1.7)));
    c.color_logits[3 * i] = static_cast<float>(rng.uniform(-1.5, 1.5));
    c.color_logits[3 * i + 1] = static_cast<float>(rng.uniform(-1.5, 1.5));
    c.color_logits[3 * i + 2] = static_cast<float>(rng.uniform(-1.5, 1.5));
    c.opacity_logits[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  return c;
}

CameraView fd_camera() {
  CameraView v;
  v.id = 0;
  v.rotation = Mat3::identity();
  v.translation = {0, 0, 2.5};
  v.intrinsics = {40, 40, 16, 16, 32, 32, 0.1};
  return v;
}

double fd_loss(const GaussianCloud& cloud, const CameraView& view,
               const std::array<float, 3>& bg, const std::vector<double>& upstream) {
  RenderBuffers raw = render_raw(cloud, view, bg);
  double loss = 0.0;
  for (size_t i = 0; i < raw.rgb.size(); ++i) loss += upstream[i] * raw.rgb[i];
  return loss;
}

}  // namespace

TEST_CASE("project on-axis and off-axis points") {
  CameraView cam = identity_camera();
  auto p = project({0, 0, 2}, std::log(0.5), cam);
  REQUIRE(p.has_value());
  CHECK(p->u == doctest::Approx(64.0));
  CHECK(p->v == doctest::Approx(64.0));
  CHECK(p->depth == doctest::Approx(2.0));
  CHECK(p->sigma2d == doctest::Approx(0.5 * 100 / 2));

  auto q = project({0.2, 0, 2}, 0.0, cam);
  REQUIRE(q.has_value());
  CHECK(q->u == doctest::Approx(74.0));

  CHECK_FALSE(project({0, 0, 0.05}, 0.0, cam).has_value());
  CHECK_FALSE(project({0, 0, -1.0}, 0.0, cam).has_value());
}

TEST_CASE("empty cloud renders background") {
  GaussianCloud empty;
  CameraView cam = identity_camera(100, 16, 32);
  RenderOutput out = render(empty, cam, {0.25f, 0.5f, 0.75f});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      CHECK(out.rgb.at(y, x, 0) == 0.25f);
      CHECK(out.rgb.at(y, x, 1) == 0.5f);
      CHECK(out.rgb.at(y, x, 2) == 0.75f);
      CHECK(out.alpha.at(y, x, 0) == 0.0f);
      CHECK(out.depth.at(y, x, 0) == 0.0f);
    }
}

TEST_CASE("single centered splat composites o*c at the center pixel") {
  // center projects exactly onto pixel (64, 64)
  GaussianCloud c = single_splat({0, 0, 2}, std::log(0.1), 1.2, 0.7);
  CameraView cam = identity_camera();
  RenderOutput out = render(c, cam, {0, 0, 0});
  double o = sigmoid(0.7), col = sigmoid(1.2);
  CHECK(out.rgb.at(64, 64, 0) == doctest::Approx(o * col).epsilon(1e-6));
  CHECK(out.alpha.at(64, 64, 0) == doctest::Approx(o).epsilon(1e-6));
  CHECK(out.depth.at(64, 64, 0) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("two coincident splats composite front-to-back") {
  GaussianCloud c;
  c.resize(2);
  c.positions = {0, 0, 2.5f, 0, 0, 2.5f};
  c.log_scales = {std::log(0.05f), std::log(0.05f)};
  // sigmoid(20) == 1 within 1e-8; logits give colors (1,0,0) and (0,1,0)
  c.color_logits = {20, -20, -20, -20, 20, -20};
  c.opacity_logits = {0, 0};  // opacity 0.5 each
  CameraView cam = identity_camera(100, 32, 64);
  RenderOutput out = render(c, cam, {0, 0, 0});
  CHECK(out.rgb.at(32, 32, 0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(out.rgb.at(32, 32, 1) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(out.rgb.at(32, 32, 2) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(out.alpha.at(32, 32, 0) == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("tiled renderer matches the brute-force compositor bit for bit") {
  SceneSpec spec;
  spec.seed = 42;
  spec.n_splats = 120;
  GaussianCloud cloud = generate_scene(spec);
  auto rig = generate_rig(RigKind::sphere, 3, 2.5, {0, 0, 0}, CameraIntrinsics{}, 42);
  for (const auto& view : rig) {
    RenderBuffers fast = render_raw(cloud, view, default_background());
    RenderBuffers slow = oracles::brute_render(cloud, view, default_background());
    REQUIRE(fast.rgb.size() == slow.rgb.size());
    for (size_t i = 0; i < fast.rgb.size(); ++i) CHECK(fast.rgb[i] == slow.rgb[i]);
    for (size_t i = 0; i < fast.alpha.size(); ++i) {
      CHECK(fast.alpha[i] == slow.alpha[i]);
      CHECK(fast.depth[i] == slow.depth[i]);
    }
  }
}

TEST_CASE("render is deterministic") {
  SceneSpec spec;
  spec.seed = 9;
  spec.n_splats = 80;
  GaussianCloud cloud = generate_scene(spec);
  auto rig = generate_rig(RigKind::sphere, 1, 2.5, {0, 0, 0}, CameraIntrinsics{}, 9);
  RenderOutput a = render(cloud, rig[0]);
  RenderOutput b = render(cloud, rig[0]);
  for (size_t i = 0; i < a.rgb.data.size(); ++i) CHECK(a.rgb.data[i] == b.rgb.data[i]);
}

TEST_CASE("adding a splat never decreases alpha") {
  SceneSpec spec;
  spec.seed = 5;
  spec.n_splats = 40;
  GaussianCloud cloud = generate_scene(spec);
  auto rig = generate_rig(RigKind::sphere, 2, 2.5, {0, 0, 0}, CameraIntrinsics{}, 5);

  GaussianCloud more = cloud;
  more.resize(41);
  more.positions[120] = 0.1f;
  more.positions[121] = -0.1f;
  more.positions[122] = 0.0f;
  more.log_scales[40] = std::log(0.3f);
  more.color_logits[120] = more.color_logits[121] = more.color_logits[122] = 0.5f;
  more.opacity_logits[40] = 1.0f;

  for (const auto& view : rig) {
    RenderBuffers a = render_raw(cloud, view, default_background());
    RenderBuffers b = render_raw(more, view, default_background());
    for (size_t i = 0; i < a.alpha.size(); ++i) CHECK(b.alpha[i] >= a.alpha[i] - 1e-15);
  }
}

TEST_CASE("alpha equals one minus transmittance") {
  SceneSpec spec;
  spec.seed = 12;
  spec.n_splats = 60;
  GaussianCloud cloud = generate_scene(spec);
  auto rig = generate_rig(RigKind::sphere, 1, 2.5, {0, 0, 0}, CameraIntrinsics{}, 12);
  // background contribution separates T from alpha: rgb = fg + bg*T with bg = 1
  RenderBuffers white = render_raw(cloud, rig[0], {1, 1, 1});
  RenderBuffers black = render_raw(cloud, rig[0], {0, 0, 0});
  for (size_t px = 0; px < white.alpha.size(); ++px) {
    double t_from_bg = white.rgb[3 * px] - black.rgb[3 * px];
    CHECK(white.alpha[px] + t_from_bg == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("backward: zero upstream gives zero gradients") {
  GaussianCloud cloud = fd_scene(8, 3);
  CameraView cam = fd_camera();
  std::vector<double> upstream(static_cast<size_t>(32) * 32 * 3, 0.0);
  CloudGradients g = render_backward(cloud, cam, default_background(), upstream);
  for (float v : g.positions) CHECK(v == 0.0f);
  for (float v : g.log_scales) CHECK(v == 0.0f);
  for (float v : g.color_logits) CHECK(v == 0.0f);
  for (float v : g.opacity_logits) CHECK(v == 0.0f);
}

TEST_CASE("backward: single-splat color gradient matches the chain rule") {
  double op_logit = 0.4, col_logit = 0.3;
  GaussianCloud c = single_splat({0, 0, 2}, std::log(0.1), col_logit, op_logit);
  CameraView cam = identity_camera();
  std::vector<double> upstream(static_cast<size_t>(128) * 128 * 3, 0.0);
  size_t center = (static_cast<size_t>(64) * 128 + 64) * 3;
  upstream[center] = 1.0;  // red channel of the center pixel

  CloudGradients g = render_backward(c, cam, {0, 0, 0}, upstream);
  double o = sigmoid(op_logit), col = sigmoid(col_logit);
  // d rgb_r / d color_logit_r = w * T * sigmoid'(logit), w = o, T = 1
  CHECK(g.color_logits[0] == doctest::Approx(o * col * (1 - col)).epsilon(1e-5));
  CHECK(g.color_logits[1] == 0.0f);
}

TEST_CASE("backward: culled and cutoff splats receive zero gradient") {
  GaussianCloud c;
  c.resize(2);
  // splat 0 behind the near plane; splat 1 tiny and far off-axis
  c.positions = {0, 0, 0.01f, 10.0f, 10.0f, 2.0f};
  c.log_scales = {std::log(0.1f), std::log(1e-4f)};
  c.color_logits = {0, 0, 0, 0, 0, 0};
  c.opacity_logits = {0.5f, 0.5f};
  CameraView cam = identity_camera();
  std::vector<double> upstream(static_cast<size_t>(128) * 128 * 3, 1.0);
  CloudGradients g = render_backward(c, cam, {0, 0, 0}, upstream);
  for (int i = 0; i < 2; ++i) {
    CHECK(g.positions[3 * i] == 0.0f);
    CHECK(g.log_scales[i] == 0.0f);
    CHECK(g.opacity_logits[i] == 0.0f);
  }
}

TEST_CASE("backward matches central finite differences on a 16-splat scene") {
  GaussianCloud cloud = fd_scene(16, 77);
  CameraView cam = fd_camera();
  std::array<float, 3> bg = {0.3f, 0.3f, 0.3f};

  // guard the smoothness precondition: every footprint covers the image
  for (size_t i = 0; i < cloud.size(); ++i) {
    Vec3 p{cloud.positions[3 * i], cloud.positions[3 * i + 1], cloud.positions[3 * i + 2]};
    auto pr = project(p, cloud.log_scales[i], cam);
    REQUIRE(pr.has_value());
    double r = 3.0 * pr->sigma2d;
    double corner = std::max({std::hypot(pr->u, pr->v), std::hypot(31 - pr->u, pr->v),
                              std::hypot(pr->u, 31 - pr->v), std::hypot(31 - pr->u, 31 - pr->v)});
    REQUIRE(r > corner + 1.0);
  }

  std::vector<double> upstream(static_cast<size_t>(32) * 32 * 3);
  Rng urng(123);
  for (auto& u : upstream) u = urng.uniform(-1.0, 1.0);

  CloudGradients g = render_backward(cloud, cam, bg, upstream);

  const double h = 1e-3;
  int checked = 0;
  Rng pick(5);
  auto check_param = [&](std::vector<float>& vec, float analytic, size_t idx) {
    float saved = vec[idx];
    vec[idx] = static_cast<float>(saved + h);
    double lp = fd_loss(cloud, cam, bg, upstream);
    vec[idx] = static_cast<float>(saved - h);
    double lm = fd_loss(cloud, cam, bg, upstream);
    vec[idx] = saved;
    double fd = (lp - lm) / (2 * h);
    double rel = std::abs(analytic - fd) / std::max(std::abs(fd), 1e-6);
    CHECK(rel < 1e-3);
    ++checked;
  };

  for (size_t i = 0; i < cloud.size(); ++i) {
    for (int d = 0; d < 3; ++d)
      check_param(cloud.positions, g.positions[3 * i + d], 3 * i + d);
    check_param(cloud.log_scales, g.log_scales[i], i);
    for (int d = 0; d < 3; ++d)
      check_param(cloud.color_logits, g.color_logits[3 * i + d], 3 * i + d);
    check_param(cloud.opacity_logits, g.opacity_logits[i], i);
    (void)pick;
  }
  CHECK(checked == 16 * 8);
}

TEST_CASE("cloud serialization round-trips") {
  SceneSpec spec;
  spec.seed = 1;
  spec.n_splats = 17;
  GaussianCloud cloud = generate_scene(spec);
  save_cloud(cloud, "test_tmp_cloud.avst");
  GaussianCloud back = load_cloud("test_tmp_cloud.avst");
  REQUIRE(back.size() == cloud.size());
  for (size_t i = 0; i < cloud.positions.size(); ++i)
    CHECK(back.positions[i] == cloud.positions[i]);
  for (size_t i = 0; i < cloud.log_scales.size(); ++i) {
    CHECK(back.log_scales[i] == cloud.log_scales[i]);
    CHECK(back.opacity_logits[i] == cloud.opacity_logits[i]);
  }
}
