#include "avs/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace avs {

namespace {

[[noreturn]] void format_error(const std::string& path, const char* what, long offset) {
  throw std::runtime_error(path + ": " + what + " (byte offset " +
                           std::to_string(offset) + ")");
}

// Skips whitespace and '#' comments, then reads one unsigned decimal token.
int read_pnm_int(std::ifstream& in, const std::string& path) {
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) format_error(path, "malformed header", static_cast<long>(in.tellg()));
  long v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > 1 << 30) format_error(path, "header value out of range", static_cast<long>(in.tellg()));
    c = in.get();
  }
  if (c != EOF) in.unget();
  return static_cast<int>(v);
}

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::ifstream& in, const std::string& path) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4))
    format_error(path, "truncated file", static_cast<long>(in.tellg()));
  return v;
}

}  // namespace

void save_ppm(const ImageF& img, const std::string& path) {
  if (img.channels != 3) throw std::runtime_error("save_ppm: image must have 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_ppm: cannot open " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
        // round-half-up keeps quantization identical across platforms
        row[static_cast<size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("save_ppm: write failed for " + path);
}

ImageF load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_ppm: cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') format_error(path, "bad magic, expected P6", 0);
  int w = read_pnm_int(in, path);
  int h = read_pnm_int(in, path);
  int maxval = read_pnm_int(in, path);
  if (w <= 0 || h <= 0) format_error(path, "bad dimensions", static_cast<long>(in.tellg()));
  if (maxval != 255) format_error(path, "unsupported maxval", static_cast<long>(in.tellg()));
  in.get();  // single whitespace byte after maxval
  ImageF img(h, w, 3);
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    if (!in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size())))
      format_error(path, "truncated payload", static_cast<long>(in.tellg()));
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.0f;
  }
  return img;
}

void save_pfm(const ImageF& img, const std::string& path) {
  if (img.channels != 1) throw std::runtime_error("save_pfm: image must have 1 channel");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_pfm: cannot open " + path);
  out << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
  // PFM scanlines run bottom-to-top
  for (int y = img.height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(&img.data[static_cast<size_t>(y) * img.width]),
              static_cast<std::streamsize>(img.width) * 4);
  if (!out) throw std::runtime_error("save_pfm: write failed for " + path);
}

ImageF load_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_pfm: cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != 'f') format_error(path, "bad magic, expected Pf", 0);
  int w = read_pnm_int(in, path);
  int h = read_pnm_int(in, path);
  int c = in.get();
  while (c != EOF && std::isspace(c)) c = in.get();
  std::string scale_tok;
  while (c != EOF && !std::isspace(c)) {
    scale_tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  double scale = std::atof(scale_tok.c_str());
  if (scale >= 0.0) format_error(path, "big-endian PFM unsupported", static_cast<long>(in.tellg()));
  ImageF img(h, w, 1);
  for (int y = h - 1; y >= 0; --y)
    if (!in.read(reinterpret_cast<char*>(&img.data[static_cast<size_t>(y) * w]),
                 static_cast<std::streamsize>(w) * 4))
      format_error(path, "truncated payload", static_cast<long>(in.tellg()));
  return img;
}

void save_tensors(const std::vector<NamedTensor>& tensors, const std::string& path) {
  std::set<std::string> names;
  for (const auto& t : tensors) {
    if (t.name.empty()) throw std::runtime_error("save_tensors: empty tensor name");
    if (!names.insert(t.name).second)
      throw std::runtime_error("save_tensors: duplicate tensor name '" + t.name + "'");
    size_t n = 1;
    for (uint32_t d : t.dims) n *= d;
    if (n != t.data.size())
      throw std::runtime_error("save_tensors: dims mismatch data length for '" + t.name + "'");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_tensors: cannot open " + path);
  out.write("AVST", 4);
  write_u32(out, 1u);
  write_u32(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    write_u32(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_u32(out, static_cast<uint32_t>(t.dims.size()));
    for (uint32_t d : t.dims) write_u32(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size()) * 4);
  }
  if (!out) throw std::runtime_error("save_tensors: write failed for " + path);
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_tensors: cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "AVST", 4) != 0)
    format_error(path, "bad magic, expected AVST", 0);
  uint32_t version = read_u32(in, path);
  if (version != 1) format_error(path, "unsupported container version", 4);
  uint32_t count = read_u32(in, path);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  std::set<std::string> names;
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    uint32_t name_len = read_u32(in, path);
    t.name.resize(name_len);
    if (!in.read(t.name.data(), name_len))
      format_error(path, "truncated name", static_cast<long>(in.tellg()));
    if (!names.insert(t.name).second)
      format_error(path, "duplicate tensor name", static_cast<long>(in.tellg()));
    uint32_t rank = read_u32(in, path);
    if (rank > 16) format_error(path, "implausible rank", static_cast<long>(in.tellg()));
    size_t n = 1;
    t.dims.resize(rank);
    for (uint32_t r = 0; r < rank; ++r) {
      t.dims[r] = read_u32(in, path);
      n *= t.dims[r];
    }
    t.data.resize(n);
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n) * 4))
      format_error(path, "truncated payload", static_cast<long>(in.tellg()));
    tensors.push_back(std::move(t));
  }
  return tensors;
}

ImageF resize_long_side(const ImageF& img, int target) {
  if (target < 1) throw std::runtime_error("resize_long_side: target must be >= 1");
  int new_w, new_h;
  if (img.width >= img.height) {
    new_w = target;
    new_h = std::max(1, static_cast<int>(std::floor(
                            static_cast<double>(img.height) * target / img.width + 0.5)));
  } else {
    new_h = target;
    new_w = std::max(1, static_cast<int>(std::floor(
                            static_cast<double>(img.width) * target / img.height + 0.5)));
  }
  if (new_w == img.width && new_h == img.height) return img;

  ImageF out(new_h, new_w, img.channels);
  const double sx = static_cast<double>(img.width) / new_w;
  const double sy = static_cast<double>(img.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, img.height - 1);
    double wy = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, img.width - 1);
      double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        double v00 = img.at(y0, x0, c), v01 = img.at(y0, x1, c);
        double v10 = img.at(y1, x0, c), v11 = img.at(y1, x1, c);
        double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
        out.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

ImageF to_gray(const ImageF& img) {
  if (img.channels != 3) throw std::runtime_error("to_gray: image must have 3 channels");
  ImageF out(img.height, img.width, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(y, x, 0) = static_cast<float>(0.299 * img.at(y, x, 0) +
                                           0.587 * img.at(y, x, 1) +
                                           0.114 * img.at(y, x, 2));
  return out;
}

ImageF center_crop(const ImageF& img, int side) {
  if (side > img.width || side > img.height)
    throw std::runtime_error("center_crop: crop larger than image");
  if (side == img.width && side == img.height) return img;
  int x0 = (img.width - side) / 2;
  int y0 = (img.height - side) / 2;
  ImageF out(side, side, img.channels);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

}  // namespace avs
