#include "avs/scene.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "avs/rng.hpp"

namespace avs {

namespace {

constexpr double kTau = 6.283185307179586477;

// Field tags keep each splat attribute on its own counter stream, so adding
// fields later cannot shift existing draws.
enum FieldTag : uint64_t { kPos = 1, kScale = 2, kColor = 3, kOpacity = 4 };

void palette_color(int palette, Rng& rng, float* out) {
  switch (palette) {
    case 1: {  // saturated hue wheel
      double h = rng.next_double() * 6.0;
      int i = static_cast<int>(h);
      double f = h - i;
      double rgb[3] = {0, 0, 0};
      switch (i % 6) {
        case 0: rgb[0] = 1; rgb[1] = f; break;
        case 1: rgb[0] = 1 - f; rgb[1] = 1; break;
        case 2: rgb[1] = 1; rgb[2] = f; break;
        case 3: rgb[1] = 1 - f; rgb[2] = 1; break;
        case 4: rgb[2] = 1; rgb[0] = f; break;
        default: rgb[2] = 1 - f; rgb[0] = 1; break;
      }
      for (int c = 0; c < 3; ++c) out[c] = static_cast<float>(0.08 + 0.84 * rgb[c]);
      break;
    }
    case 2: {  // two-tone
      bool warm = rng.next_double() < 0.5;
      double j = rng.next_double() * 0.15;
      if (warm) {
        out[0] = static_cast<float>(0.85 - j);
        out[1] = static_cast<float>(0.45 + j);
        out[2] = static_cast<float>(0.12 + j);
      } else {
        out[0] = static_cast<float>(0.12 + j);
        out[1] = static_cast<float>(0.45 - j);
        out[2] = static_cast<float>(0.85 - j);
      }
      break;
    }
    default:  // uniform rgb
      for (int c = 0; c < 3; ++c)
        out[c] = static_cast<float>(0.05 + 0.90 * rng.next_double());
  }
}

Mat3 look_at_rotation(const Vec3& eye, const Vec3& target) {
  Vec3 forward = (target - eye).normalized();
  Vec3 up{0, 0, 1};
  // fall back near the poles so the frame never degenerates
  if (std::abs(forward.dot(up)) > 0.999) up = {1, 0, 0};
  Vec3 right = forward.cross(up).normalized();
  Vec3 down = forward.cross(right);  // = z x x, unit by construction
  return Mat3::from_rows(right, down, forward);
}

}  // namespace

GaussianCloud generate_scene(const SceneSpec& spec) {
  if (spec.n_splats < 1) throw std::runtime_error("generate_scene: n_splats must be >= 1");
  if (spec.bounds.degenerate()) throw std::runtime_error("generate_scene: degenerate bounds");
  GaussianCloud cloud;
  cloud.resize(static_cast<size_t>(spec.n_splats));
  Vec3 lo = spec.bounds.lo, sz = spec.bounds.size();
  for (int i = 0; i < spec.n_splats; ++i) {
    Rng pos_rng = Rng::substream(spec.seed, kPos, static_cast<uint64_t>(i));
    cloud.positions[3 * i] = static_cast<float>(lo.x + sz.x * pos_rng.next_double());
    cloud.positions[3 * i + 1] = static_cast<float>(lo.y + sz.y * pos_rng.next_double());
    cloud.positions[3 * i + 2] = static_cast<float>(lo.z + sz.z * pos_rng.next_double());

    Rng scale_rng = Rng::substream(spec.seed, kScale, static_cast<uint64_t>(i));
    cloud.log_scales[i] =
        static_cast<float>(scale_rng.uniform(spec.log_scale_min, spec.log_scale_max));

    Rng color_rng = Rng::substream(spec.seed, kColor, static_cast<uint64_t>(i));
    float rgb[3];
    palette_color(spec.palette, color_rng, rgb);
    for (int c = 0; c < 3; ++c)
      cloud.color_logits[3 * i + c] = static_cast<float>(logit(std::clamp(rgb[c], 0.01f, 0.99f)));

    Rng op_rng = Rng::substream(spec.seed, kOpacity, static_cast<uint64_t>(i));
    cloud.opacity_logits[i] = static_cast<float>(logit(op_rng.uniform(0.6, 0.95)));
  }
  return cloud;
}

std::vector<CameraView> generate_rig(RigKind kind, int n, double radius, Vec3 center,
                                     const CameraIntrinsics& intrinsics, uint64_t seed) {
  if (n < 1) throw std::runtime_error("generate_rig: n must be >= 1");
  if (radius <= 0) throw std::runtime_error("generate_rig: radius must be > 0");
  Rng rng = Rng::substream(seed, 0x5169);
  double azimuth0 = rng.next_double() * kTau;

  std::vector<CameraView> views;
  views.reserve(static_cast<size_t>(n));
  const double golden = 0.6180339887498948482;
  for (int i = 0; i < n; ++i) {
    Vec3 pos;
    if (kind == RigKind::orbit) {
      double a = azimuth0 + kTau * i / n;
      pos = center + Vec3{radius * std::cos(a), radius * std::sin(a), 0.0};
    } else {
      // Fibonacci lattice, z clamped off the poles so look-at stays stable.
      double z = 1.0 - 2.0 * (i + 0.5) / n;
      z = std::clamp(z, -0.98, 0.98);
      double r = std::sqrt(1.0 - z * z);
      double a = azimuth0 + kTau * std::fmod(i * golden, 1.0);
      pos = center + Vec3{radius * r * std::cos(a), radius * r * std::sin(a), radius * z};
    }
    CameraView view;
    view.id = i;
    view.intrinsics = intrinsics;
    view.rotation = look_at_rotation(pos, center);
    view.translation = -(view.rotation * pos);
    views.push_back(std::move(view));
  }
  return views;
}

void render_gt(const GaussianCloud& cloud, std::vector<CameraView>& views) {
  for (auto& v : views) v.gt_image = render(cloud, v).rgb;
}

std::pair<std::vector<CameraView>, std::vector<CameraView>> split_pool(
    const std::vector<CameraView>& views, int n_test, uint64_t seed) {
  if (n_test >= static_cast<int>(views.size()))
    throw std::runtime_error("split_pool: n_test must be < number of views");
  std::vector<int> order(views.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::substream(seed, 0x591f7);
  rng.shuffle(order);
  std::vector<CameraView> pool, test;
  for (size_t i = 0; i < order.size(); ++i) {
    if (i < order.size() - static_cast<size_t>(n_test))
      pool.push_back(views[order[i]]);
    else
      test.push_back(views[order[i]]);
  }
  return {std::move(pool), std::move(test)};
}

SceneBundle make_scene_bundle(const SceneBundleConfig& cfg) {
  SceneBundle bundle;
  bundle.gt_cloud = generate_scene(cfg.spec);
  auto views = generate_rig(cfg.rig_kind, cfg.rig_n, cfg.rig_radius, cfg.spec.bounds.center(),
                            cfg.intrinsics, cfg.spec.seed);
  render_gt(bundle.gt_cloud, views);
  auto [pool, test] = split_pool(views, cfg.n_test, cfg.spec.seed);
  bundle.train_pool = std::move(pool);
  bundle.test_views = std::move(test);
  return bundle;
}

void save_scene_dir(const SceneBundle& bundle, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_cloud(bundle.gt_cloud, dir + "/gt_cloud.avst");

  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  auto dump_views = [&](const std::vector<CameraView>& views, const char* role) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : views) {
      nlohmann::json jv;
      jv["id"] = v.id;
      jv["rotation"] = std::vector<double>(v.rotation.m, v.rotation.m + 9);
      jv["translation"] = {v.translation.x, v.translation.y, v.translation.z};
      jv["intrinsics"] = {{"fx", v.intrinsics.fx}, {"fy", v.intrinsics.fy},
                          {"cx", v.intrinsics.cx}, {"cy", v.intrinsics.cy},
                          {"width", v.intrinsics.width}, {"height", v.intrinsics.height},
                          {"near", v.intrinsics.near}};
      if (v.gt_image) {
        std::string name = std::string(role) + "_" + std::to_string(v.id) + ".ppm";
        save_ppm(*v.gt_image, dir + "/" + name);
        jv["image"] = name;
      }
      arr.push_back(jv);
    }
    return arr;
  };
  manifest["pool"] = dump_views(bundle.train_pool, "pool");
  manifest["test"] = dump_views(bundle.test_views, "test");
  std::ofstream out(dir + "/scene.json");
  out << manifest.dump(2) << "\n";
}

}  // namespace avs
