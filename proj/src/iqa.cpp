#include "avs/iqa.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include <fstream>

namespace avs {

namespace {

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  Plane() = default;
  Plane(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0.0) {}
  double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

inline int reflect(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - 1 - i;
  return i;
}

std::vector<double> gaussian_kernel(int window, double sigma) {
  std::vector<double> k(static_cast<size_t>(window));
  int half = window / 2;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    double d = i - half;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& x : k) x /= sum;
  return k;
}

Plane blur(const Plane& in, const std::vector<double>& kernel) {
  int half = static_cast<int>(kernel.size()) / 2;
  Plane tmp(in.h, in.w), out(in.h, in.w);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double s = 0.0;
      for (int k = -half; k <= half; ++k) s += kernel[k + half] * in.at(y, reflect(x + k, in.w));
      tmp.at(y, x) = s;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double s = 0.0;
      for (int k = -half; k <= half; ++k) s += kernel[k + half] * tmp.at(reflect(y + k, in.h), x);
      out.at(y, x) = s;
    }
  return out;
}

// Transpose of blur(): scatter through the same reflected taps, passes in
// reverse order.
Plane blur_adjoint(const Plane& in, const std::vector<double>& kernel) {
  int half = static_cast<int>(kernel.size()) / 2;
  Plane tmp(in.h, in.w), out(in.h, in.w);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double v = in.at(y, x);
      if (v == 0.0) continue;
      for (int k = -half; k <= half; ++k) tmp.at(reflect(y + k, in.h), x) += kernel[k + half] * v;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double v = tmp.at(y, x);
      if (v == 0.0) continue;
      for (int k = -half; k <= half; ++k) out.at(y, reflect(x + k, in.w)) += kernel[k + half] * v;
    }
  return out;
}

Plane channel_plane(const ImageF& img, int c) {
  Plane p(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p.at(y, x) = img.at(y, x, c);
  return p;
}

struct SSIMFields {
  Plane mu_a, mu_b, var_a, var_b, cov, map;
};

SSIMFields ssim_fields(const Plane& a, const Plane& b, const SSIMConfig& cfg) {
  const std::vector<double> kernel = gaussian_kernel(cfg.window, cfg.sigma);
  SSIMFields f;
  f.mu_a = blur(a, kernel);
  f.mu_b = blur(b, kernel);
  Plane aa(a.h, a.w), bb(a.h, a.w), ab(a.h, a.w);
  for (size_t i = 0; i < a.v.size(); ++i) {
    aa.v[i] = a.v[i] * a.v[i];
    bb.v[i] = b.v[i] * b.v[i];
    ab.v[i] = a.v[i] * b.v[i];
  }
  f.var_a = blur(aa, kernel);
  f.var_b = blur(bb, kernel);
  f.cov = blur(ab, kernel);
  f.map = Plane(a.h, a.w);
  const double c1 = cfg.c1(), c2 = cfg.c2();
  for (size_t i = 0; i < a.v.size(); ++i) {
    f.var_a.v[i] -= f.mu_a.v[i] * f.mu_a.v[i];
    f.var_b.v[i] -= f.mu_b.v[i] * f.mu_b.v[i];
    f.cov.v[i] -= f.mu_a.v[i] * f.mu_b.v[i];
    double n1 = 2.0 * f.mu_a.v[i] * f.mu_b.v[i] + c1;
    double n2 = 2.0 * f.cov.v[i] + c2;
    double d1 = f.mu_a.v[i] * f.mu_a.v[i] + f.mu_b.v[i] * f.mu_b.v[i] + c1;
    double d2 = f.var_a.v[i] + f.var_b.v[i] + c2;
    f.map.v[i] = (n1 * n2) / (d1 * d2);
  }
  return f;
}

void check_pair(const ImageF& a, const ImageF& b, const char* fn) {
  if (!a.same_shape(b)) throw std::runtime_error(std::string(fn) + ": dimension mismatch");
  if (a.channels != 1 && a.channels != 3)
    throw std::runtime_error(std::string(fn) + ": images must have 1 or 3 channels");
}

// ---- NIQE internals ----

constexpr int kPatch = 32;
constexpr int kFeatures = 10;

void ggd_pair(const std::vector<double>& samples, double* out) {
  GGDFit fit = ggd_fit(samples);
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  var /= static_cast<double>(samples.size());
  out[0] = fit.beta;
  out[1] = var;
}

// [beta, var] for the patch MSCN plus its H, V and two diagonal neighbor
// products.
void patch_features(const Plane& m, int y0, int x0, double* out) {
  std::vector<double> c(kPatch * kPatch);
  for (int y = 0; y < kPatch; ++y)
    for (int x = 0; x < kPatch; ++x) c[static_cast<size_t>(y) * kPatch + x] = m.at(y0 + y, x0 + x);
  ggd_pair(c, out);

  std::vector<double> prod;
  prod.reserve(kPatch * kPatch);
  auto cc = [&](int y, int x) { return c[static_cast<size_t>(y) * kPatch + x]; };
  prod.clear();
  for (int y = 0; y < kPatch; ++y)
    for (int x = 0; x + 1 < kPatch; ++x) prod.push_back(cc(y, x) * cc(y, x + 1));
  ggd_pair(prod, out + 2);
  prod.clear();
  for (int y = 0; y + 1 < kPatch; ++y)
    for (int x = 0; x < kPatch; ++x) prod.push_back(cc(y, x) * cc(y + 1, x));
  ggd_pair(prod, out + 4);
  prod.clear();
  for (int y = 0; y + 1 < kPatch; ++y)
    for (int x = 0; x + 1 < kPatch; ++x) prod.push_back(cc(y, x) * cc(y + 1, x + 1));
  ggd_pair(prod, out + 6);
  prod.clear();
  for (int y = 0; y + 1 < kPatch; ++y)
    for (int x = 1; x < kPatch; ++x) prod.push_back(cc(y, x) * cc(y + 1, x - 1));
  ggd_pair(prod, out + 8);
}

std::vector<std::array<double, kFeatures>> image_features(const ImageF& img) {
  ImageF gray = img.channels == 3 ? to_gray(img) : img;
  ImageF m = mscn(gray);
  Plane mp = channel_plane(m, 0);
  std::vector<std::array<double, kFeatures>> feats;
  for (int y0 = 0; y0 + kPatch <= m.height; y0 += kPatch)
    for (int x0 = 0; x0 + kPatch <= m.width; x0 += kPatch) {
      std::array<double, kFeatures> f{};
      patch_features(mp, y0, x0, f.data());
      feats.push_back(f);
    }
  return feats;
}

// Cholesky solve for the small SPD systems NIQE needs.
std::vector<double> spd_solve(std::vector<double> A, std::vector<double> rhs, int n) {
  for (int j = 0; j < n; ++j) {
    double d = A[static_cast<size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      double l = A[static_cast<size_t>(j) * n + k];
      d -= l * l;
    }
    if (d <= 0.0) throw std::runtime_error("spd_solve: matrix not positive definite");
    d = std::sqrt(d);
    A[static_cast<size_t>(j) * n + j] = d;
    for (int i = j + 1; i < n; ++i) {
      double s = A[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        s -= A[static_cast<size_t>(i) * n + k] * A[static_cast<size_t>(j) * n + k];
      A[static_cast<size_t>(i) * n + j] = s / d;
    }
  }
  for (int i = 0; i < n; ++i) {
    double s = rhs[i];
    for (int k = 0; k < i; ++k) s -= A[static_cast<size_t>(i) * n + k] * rhs[k];
    rhs[i] = s / A[static_cast<size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = rhs[i];
    for (int k = i + 1; k < n; ++k) s -= A[static_cast<size_t>(k) * n + i] * rhs[k];
    rhs[i] = s / A[static_cast<size_t>(i) * n + i];
  }
  return rhs;
}

}  // namespace

SSIMMap ssim_map(const ImageF& a, const ImageF& b, const SSIMConfig& cfg) {
  check_pair(a, b, "ssim_map");
  SSIMMap result;
  result.values = ImageF(a.height, a.width, 1);
  std::vector<double> acc(static_cast<size_t>(a.height) * a.width, 0.0);
  for (int c = 0; c < a.channels; ++c) {
    Plane pa = channel_plane(a, c), pb = channel_plane(b, c);
    SSIMFields f = ssim_fields(pa, pb, cfg);
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += f.map.v[i];
  }
  double mean = 0.0;
  for (size_t i = 0; i < acc.size(); ++i) {
    double v = acc[i] / a.channels;
    result.values.data[i] = static_cast<float>(v);
    mean += v;
  }
  result.mean = mean / static_cast<double>(acc.size());
  return result;
}

double ssim_mean(const ImageF& a, const ImageF& b, const SSIMConfig& cfg) {
  return ssim_map(a, b, cfg).mean;
}

ImageF ssim_backward(const ImageF& a, const ImageF& b, const SSIMConfig& cfg, double upstream) {
  check_pair(a, b, "ssim_backward");
  const std::vector<double> kernel = gaussian_kernel(cfg.window, cfg.sigma);
  const double u = upstream / (static_cast<double>(a.height) * a.width * a.channels);
  ImageF grad(a.height, a.width, a.channels);
  const double c1 = cfg.c1(), c2 = cfg.c2();
  for (int c = 0; c < a.channels; ++c) {
    Plane pa = channel_plane(a, c), pb = channel_plane(b, c);
    SSIMFields f = ssim_fields(pa, pb, cfg);
    size_t n = pa.v.size();
    Plane f_mu(pa.h, pa.w), f_var(pa.h, pa.w), f_cov(pa.h, pa.w);
    Plane f_var_mu(pa.h, pa.w), f_cov_mub(pa.h, pa.w);
    for (size_t i = 0; i < n; ++i) {
      double mu_a = f.mu_a.v[i], mu_b = f.mu_b.v[i];
      double n1 = 2.0 * mu_a * mu_b + c1;
      double n2 = 2.0 * f.cov.v[i] + c2;
      double d1 = mu_a * mu_a + mu_b * mu_b + c1;
      double d2 = f.var_a.v[i] + f.var_b.v[i] + c2;
      double d_mu = 2.0 * (mu_b * n2 * d1 - mu_a * n1 * n2) / (d1 * d1 * d2);
      double d_var = -n1 * n2 / (d1 * d2 * d2);
      double d_cov = 2.0 * n1 / (d1 * d2);
      f_mu.v[i] = u * d_mu;
      f_var.v[i] = u * d_var;
      f_cov.v[i] = u * d_cov;
      f_var_mu.v[i] = u * d_var * mu_a;
      f_cov_mub.v[i] = u * d_cov * mu_b;
    }
    Plane t_mu = blur_adjoint(f_mu, kernel);
    Plane t_var = blur_adjoint(f_var, kernel);
    Plane t_cov = blur_adjoint(f_cov, kernel);
    Plane t_var_mu = blur_adjoint(f_var_mu, kernel);
    Plane t_cov_mub = blur_adjoint(f_cov_mub, kernel);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        double g = t_mu.at(y, x) + 2.0 * pa.at(y, x) * t_var.at(y, x) -
                   2.0 * t_var_mu.at(y, x) + pb.at(y, x) * t_cov.at(y, x) -
                   t_cov_mub.at(y, x);
        grad.at(y, x, c) = static_cast<float>(g);
      }
  }
  return grad;
}

double psnr(const ImageF& a, const ImageF& b, double dynamic_range) {
  if (!a.same_shape(b)) throw std::runtime_error("psnr: dimension mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(dynamic_range * dynamic_range / mse);
}

std::string psnr_to_string(double psnr_db) {
  if (std::isinf(psnr_db)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", psnr_db);
  return buf;
}

ImageF mscn(const ImageF& gray) {
  if (gray.channels != 1) throw std::runtime_error("mscn: image must have 1 channel");
  const std::vector<double> kernel = gaussian_kernel(7, 7.0 / 6.0);
  Plane p = channel_plane(gray, 0);
  Plane mu = blur(p, kernel);
  Plane sq(p.h, p.w);
  for (size_t i = 0; i < p.v.size(); ++i) sq.v[i] = p.v[i] * p.v[i];
  Plane mom2 = blur(sq, kernel);
  ImageF out(gray.height, gray.width, 1);
  const double c = 1.0 / 255.0;
  for (size_t i = 0; i < p.v.size(); ++i) {
    double var = std::max(mom2.v[i] - mu.v[i] * mu.v[i], 0.0);
    out.data[i] = static_cast<float>((p.v[i] - mu.v[i]) / (std::sqrt(var) + c));
  }
  return out;
}

GGDFit ggd_fit(const std::vector<double>& samples) {
  if (samples.size() < 16) throw std::runtime_error("ggd_fit: need at least 16 samples");
  double e_abs = 0.0, e_sq = 0.0;
  for (double s : samples) {
    e_abs += std::abs(s);
    e_sq += s * s;
  }
  e_abs /= static_cast<double>(samples.size());
  e_sq /= static_cast<double>(samples.size());
  if (e_sq == 0.0) throw std::runtime_error("ggd_fit: all samples are zero");
  const double target = (e_abs * e_abs) / e_sq;

  const int grid = 2001;
  const double lo = std::log(0.2), hi = std::log(10.0);
  double best_beta = 0.2, best_err = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid; ++i) {
    double beta = std::exp(lo + (hi - lo) * i / (grid - 1));
    double ratio = std::exp(2.0 * std::lgamma(2.0 / beta) - std::lgamma(1.0 / beta) -
                            std::lgamma(3.0 / beta));
    double err = std::abs(ratio - target);
    if (err < best_err) {
      best_err = err;
      best_beta = beta;
    }
  }
  GGDFit fit;
  fit.beta = best_beta;
  fit.alpha = std::sqrt(e_sq * std::exp(std::lgamma(1.0 / best_beta) - std::lgamma(3.0 / best_beta)));
  return fit;
}

NIQEModel niqe_fit(const std::vector<ImageF>& pristine) {
  if (pristine.size() < 10) throw std::runtime_error("niqe_fit: need at least 10 pristine images");
  std::vector<std::array<double, kFeatures>> all;
  for (const auto& img : pristine) {
    auto f = image_features(img);
    all.insert(all.end(), f.begin(), f.end());
  }
  if (all.size() < 2) throw std::runtime_error("niqe_fit: images too small for 32x32 patches");

  NIQEModel model;
  model.mu.assign(kFeatures, 0.0);
  model.covariance.assign(kFeatures * kFeatures, 0.0);
  for (const auto& f : all)
    for (int i = 0; i < kFeatures; ++i) model.mu[i] += f[i];
  for (auto& m : model.mu) m /= static_cast<double>(all.size());
  for (const auto& f : all)
    for (int i = 0; i < kFeatures; ++i)
      for (int j = 0; j < kFeatures; ++j)
        model.covariance[static_cast<size_t>(i) * kFeatures + j] +=
            (f[i] - model.mu[i]) * (f[j] - model.mu[j]);
  for (auto& c : model.covariance) c /= static_cast<double>(all.size() - 1);
  return model;
}

double niqe_score(const ImageF& img, const NIQEModel& model) {
  auto feats = image_features(img);
  if (feats.empty()) throw std::runtime_error("niqe_score: image too small for 32x32 patches");
  std::vector<double> mu(kFeatures, 0.0);
  for (const auto& f : feats)
    for (int i = 0; i < kFeatures; ++i) mu[i] += f[i];
  for (auto& m : mu) m /= static_cast<double>(feats.size());

  std::vector<double> cov(kFeatures * kFeatures, 0.0);
  if (feats.size() > 1) {
    for (const auto& f : feats)
      for (int i = 0; i < kFeatures; ++i)
        for (int j = 0; j < kFeatures; ++j)
          cov[static_cast<size_t>(i) * kFeatures + j] += (f[i] - mu[i]) * (f[j] - mu[j]);
    for (auto& c : cov) c /= static_cast<double>(feats.size() - 1);
  }

  std::vector<double> m(kFeatures * kFeatures);
  for (int i = 0; i < kFeatures * kFeatures; ++i) m[i] = 0.5 * (cov[i] + model.covariance[i]);
  for (int i = 0; i < kFeatures; ++i) m[static_cast<size_t>(i) * kFeatures + i] += 1e-6;

  std::vector<double> diff(kFeatures);
  for (int i = 0; i < kFeatures; ++i) diff[i] = mu[i] - model.mu[i];
  std::vector<double> sol = spd_solve(m, diff, kFeatures);
  double q = 0.0;
  for (int i = 0; i < kFeatures; ++i) q += diff[i] * sol[i];
  return std::sqrt(std::max(q, 0.0));
}

void save_niqe_model(const NIQEModel& model, const std::string& path) {
  std::vector<NamedTensor> tensors;
  tensors.emplace_back("mu", std::vector<uint32_t>{kFeatures},
                       std::vector<float>(model.mu.begin(), model.mu.end()));
  tensors.emplace_back("cov", std::vector<uint32_t>{kFeatures, kFeatures},
                       std::vector<float>(model.covariance.begin(), model.covariance.end()));
  save_tensors(tensors, path);
  nlohmann::json sidecar;
  sidecar["feature_spec_version"] = model.feature_spec_version;
  std::ofstream out(path + ".json");
  out << sidecar.dump(2) << "\n";
}

NIQEModel load_niqe_model(const std::string& path) {
  auto tensors = load_tensors(path);
  NIQEModel model;
  for (const auto& t : tensors) {
    if (t.name == "mu") model.mu.assign(t.data.begin(), t.data.end());
    if (t.name == "cov") model.covariance.assign(t.data.begin(), t.data.end());
  }
  if (model.mu.size() != kFeatures || model.covariance.size() != kFeatures * kFeatures)
    throw std::runtime_error("load_niqe_model: malformed model file");
  std::ifstream in(path + ".json");
  if (in) {
    nlohmann::json sidecar = nlohmann::json::parse(in);
    int v = sidecar.value("feature_spec_version", 1);
    if (v != 1) throw std::runtime_error("load_niqe_model: unsupported feature spec version");
    model.feature_spec_version = v;
  }
  return model;
}

}  // namespace avs
