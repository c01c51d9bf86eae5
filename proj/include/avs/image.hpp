#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace avs {

// Dense float image, row-major, channel-interleaved. Color images keep
// values in [0,1]; depth maps reuse the container with scene-unit values
// and are exported through PFM instead of PPM.
struct ImageF {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  ImageF() = default;
  ImageF(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t numel() const { return data.size(); }
  bool same_shape(const ImageF& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

struct NamedTensor {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;

  NamedTensor() = default;
  NamedTensor(std::string n, std::vector<uint32_t> d, std::vector<float> v)
      : name(std::move(n)), dims(std::move(d)), data(std::move(v)) {}
};

// P6 binary PPM, maxval 255, round-half-up quantization.
void save_ppm(const ImageF& img, const std::string& path);
ImageF load_ppm(const std::string& path);

// Grayscale PFM ("Pf", scale -1.0, little-endian), bottom-up scanlines.
void save_pfm(const ImageF& img, const std::string& path);
ImageF load_pfm(const std::string& path);

// "AVST" tensor container, version 1, little-endian. Round-trip is
// bit-exact for float32.
void save_tensors(const std::vector<NamedTensor>& tensors, const std::string& path);
std::vector<NamedTensor> load_tensors(const std::string& path);

// Resizes so the longer side equals target; the short side follows the
// aspect ratio (round, min 1). Bilinear with half-pixel centers, output
// clamped to [0,1].
ImageF resize_long_side(const ImageF& img, int target);

// Rec.601 luma from a 3-channel image.
ImageF to_gray(const ImageF& img);

ImageF center_crop(const ImageF& img, int side);

}  // namespace avs
