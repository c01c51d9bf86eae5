#include "avs/recon.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "avs/iqa.hpp"

namespace avs {

namespace {

constexpr int kReferenceIters = 30000;
constexpr int kReferenceSchedule[] = {400, 900, 1500, 2200, 3000, 3900, 4900, 6000,
                                      7200, 8500, 9900, 11400, 13000, 14700, 16500, 18400};

// One Adam update over a parameter group; moments and parameters advance
// together. Pure given (params, grads, step), so replays are bit-identical.
void adam_update(std::vector<float>& params, const std::vector<float>& grads,
                 std::vector<float>& m, std::vector<float>& v, double lr, int64_t step) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    double mi = beta1 * m[i] + (1.0 - beta1) * g;
    double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    double mhat = mi / bc1;
    double vhat = vi / bc2;
    params[i] = static_cast<float>(params[i] - lr * mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

std::vector<int> schedule_points(int total_iters) {
  if (total_iters < 1) throw std::runtime_error("schedule_points: total_iters must be >= 1");
  std::vector<int> points;
  for (int k : kReferenceSchedule) {
    int v = static_cast<int>(std::floor(
        static_cast<double>(total_iters) * k / kReferenceIters + 0.5));
    if (v >= 1 && v < total_iters && (points.empty() || points.back() != v)) points.push_back(v);
  }
  return points;
}

std::pair<double, std::vector<double>> loss_and_grad(const ImageF& render_rgb,
                                                     const ImageF& gt, double lambda_ssim) {
  if (!render_rgb.same_shape(gt)) throw std::runtime_error("loss_and_grad: dimension mismatch");
  const size_t n = render_rgb.data.size();
  std::vector<double> grad(n, 0.0);
  double l1 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = static_cast<double>(render_rgb.data[i]) - gt.data[i];
    l1 += std::abs(d);
    double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    grad[i] = (1.0 - lambda_ssim) * s / static_cast<double>(n);
  }
  l1 /= static_cast<double>(n);
  double loss = (1.0 - lambda_ssim) * l1;
  if (lambda_ssim > 0.0) {
    double mean_ssim = ssim_mean(render_rgb, gt);
    loss += lambda_ssim * (1.0 - mean_ssim);
    ImageF ssim_grad = ssim_backward(render_rgb, gt, SSIMConfig{}, -lambda_ssim);
    for (size_t i = 0; i < n; ++i) grad[i] += ssim_grad.data[i];
  }
  return {loss, std::move(grad)};
}

OptimState init_state(const ReconConfig& config) {
  if (config.n_init_splats < 1) throw std::runtime_error("init_state: n_init_splats must be >= 1");
  OptimState state;
  state.cloud.resize(static_cast<size_t>(config.n_init_splats));
  const Vec3 lo = config.init_bounds.lo, sz = config.init_bounds.size();
  const float opacity_logit = static_cast<float>(logit(0.1));
  const float log_scale = static_cast<float>(std::log(0.05 * config.init_bounds.diagonal()));
  for (int i = 0; i < config.n_init_splats; ++i) {
    Rng rng = Rng::substream(config.seed, 0x1217, static_cast<uint64_t>(i));
    state.cloud.positions[3 * i] = static_cast<float>(lo.x + sz.x * rng.next_double());
    state.cloud.positions[3 * i + 1] = static_cast<float>(lo.y + sz.y * rng.next_double());
    state.cloud.positions[3 * i + 2] = static_cast<float>(lo.z + sz.z * rng.next_double());
    state.cloud.log_scales[i] = log_scale;
    state.cloud.color_logits[3 * i] = 0.0f;
    state.cloud.color_logits[3 * i + 1] = 0.0f;
    state.cloud.color_logits[3 * i + 2] = 0.0f;
    state.cloud.opacity_logits[i] = opacity_logit;
  }
  state.first_moment = CloudGradients::zeros_like(state.cloud);
  state.second_moment = CloudGradients::zeros_like(state.cloud);
  state.step = 0;
  return state;
}

void fit(OptimState& state, std::span<const CameraView> views, const ReconConfig& config,
         int iters, Rng& rng) {
  if (views.empty()) throw std::runtime_error("fit: empty view set");
  for (const auto& v : views)
    if (!v.gt_image) throw std::runtime_error("fit: view without gt_image");

  std::vector<int> order(views.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  size_t cursor = 0;

  for (int it = 0; it < iters; ++it) {
    if (cursor == order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    const CameraView& view = views[order[cursor++]];

    RenderOutput out = render(state.cloud, view, config.background);
    auto [loss, grad_rgb] = loss_and_grad(out.rgb, *view.gt_image, config.lambda_ssim);
    (void)loss;
    CloudGradients grads = render_backward(state.cloud, view, config.background, grad_rgb);

    state.step += 1;
    adam_update(state.cloud.positions, grads.positions, state.first_moment.positions,
                state.second_moment.positions, config.lr_position, state.step);
    adam_update(state.cloud.log_scales, grads.log_scales, state.first_moment.log_scales,
                state.second_moment.log_scales, config.lr_scale, state.step);
    adam_update(state.cloud.color_logits, grads.color_logits, state.first_moment.color_logits,
                state.second_moment.color_logits, config.lr_color, state.step);
    adam_update(state.cloud.opacity_logits, grads.opacity_logits,
                state.first_moment.opacity_logits, state.second_moment.opacity_logits,
                config.lr_opacity, state.step);
  }
}

uint64_t recon_config_hash(const ReconConfig& config) {
  nlohmann::json j;
  j["total_iters"] = config.total_iters;
  j["lr_position"] = config.lr_position;
  j["lr_scale"] = config.lr_scale;
  j["lr_color"] = config.lr_color;
  j["lr_opacity"] = config.lr_opacity;
  j["lambda_ssim"] = config.lambda_ssim;
  j["n_init_splats"] = config.n_init_splats;
  j["init_bounds"] = {config.init_bounds.lo.x, config.init_bounds.lo.y, config.init_bounds.lo.z,
                      config.init_bounds.hi.x, config.init_bounds.hi.y, config.init_bounds.hi.z};
  j["seed"] = config.seed;
  j["background"] = {config.background[0], config.background[1], config.background[2]};
  std::string s = j.dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_checkpoint(const OptimState& state, const ReconConfig& config,
                     const std::string& path) {
  auto tensors = cloud_to_tensors(state.cloud);
  uint32_t n = static_cast<uint32_t>(state.cloud.size());
  auto add = [&](const char* prefix, const CloudGradients& g) {
    tensors.emplace_back(std::string(prefix) + ".positions", std::vector<uint32_t>{n, 3},
                         g.positions);
    tensors.emplace_back(std::string(prefix) + ".log_scales", std::vector<uint32_t>{n},
                         g.log_scales);
    tensors.emplace_back(std::string(prefix) + ".color_logits", std::vector<uint32_t>{n, 3},
                         g.color_logits);
    tensors.emplace_back(std::string(prefix) + ".opacity_logits", std::vector<uint32_t>{n},
                         g.opacity_logits);
  };
  add("m1", state.first_moment);
  add("m2", state.second_moment);
  save_tensors(tensors, path);

  nlohmann::json sidecar;
  sidecar["step"] = state.step;
  sidecar["config_hash"] = recon_config_hash(config);
  std::ofstream out(path + ".json");
  out << sidecar.dump(2) << "\n";
}

OptimState load_checkpoint(const std::string& path) {
  auto tensors = load_tensors(path);
  OptimState state;
  state.cloud = cloud_from_tensors(tensors);
  state.first_moment = CloudGradients::zeros_like(state.cloud);
  state.second_moment = CloudGradients::zeros_like(state.cloud);
  for (const auto& t : tensors) {
    auto assign = [&](CloudGradients& g, const std::string& field) {
      if (field == "positions") g.positions = t.data;
      else if (field == "log_scales") g.log_scales = t.data;
      else if (field == "color_logits") g.color_logits = t.data;
      else if (field == "opacity_logits") g.opacity_logits = t.data;
    };
    if (t.name.rfind("m1.", 0) == 0) assign(state.first_moment, t.name.substr(3));
    if (t.name.rfind("m2.", 0) == 0) assign(state.second_moment, t.name.substr(3));
  }
  std::ifstream in(path + ".json");
  if (in) {
    nlohmann::json sidecar = nlohmann::json::parse(in);
    state.step = sidecar.value("step", int64_t{0});
  }
  return state;
}

}  // namespace avs
