#pragma once

#include <string>
#include <vector>

#include "avs/image.hpp"

namespace avs {

struct SSIMConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

struct SSIMMap {
  ImageF values;  // 1 channel; channels of the inputs averaged per pixel
  double mean = 0.0;
};

// Gaussian-windowed SSIM map with reflect padding; multi-channel inputs are
// scored per channel and averaged.
SSIMMap ssim_map(const ImageF& a, const ImageF& b, const SSIMConfig& cfg = {});

double ssim_mean(const ImageF& a, const ImageF& b, const SSIMConfig& cfg = {});

// d(upstream * meanSSIM(a,b)) / da.
ImageF ssim_backward(const ImageF& a, const ImageF& b, const SSIMConfig& cfg,
                     double upstream);

// 10*log10(L^2 / MSE); +infinity when the images match exactly.
double psnr(const ImageF& a, const ImageF& b, double dynamic_range = 1.0);

// Formats PSNR for reports; infinity becomes the "inf" sentinel.
std::string psnr_to_string(double psnr_db);

// Mean-subtracted contrast-normalized coefficients (7x7 Gaussian window,
// sigma 7/6, stabilizer 1/255, reflect padding).
ImageF mscn(const ImageF& gray);

struct GGDFit {
  double beta = 2.0;   // shape
  double alpha = 1.0;  // scale
};

// Moment-matching generalized-Gaussian fit; beta searched on a log grid
// over [0.2, 10] with 2001 points.
GGDFit ggd_fit(const std::vector<double>& samples);

struct NIQEModel {
  std::vector<double> mu;          // 10
  std::vector<double> covariance;  // 10x10 row-major
  int feature_spec_version = 1;
};

// Single-scale NIQE-style model: per 32x32 patch, [beta, sigma^2] of the
// MSCN field plus the same pair for 4 directional neighbor products.
NIQEModel niqe_fit(const std::vector<ImageF>& pristine);
double niqe_score(const ImageF& img, const NIQEModel& model);  // higher = worse

void save_niqe_model(const NIQEModel& model, const std::string& path);
NIQEModel load_niqe_model(const std::string& path);

}  // namespace avs
