#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rpd/tensor.hpp"

namespace rpd {

// 8-bit CHW image, the at-rest form. Math happens on Tensor ([0,1] doubles).
struct ImageU8 {
  int c = 0, h = 0, w = 0;
  std::vector<uint8_t> v;

  ImageU8() = default;
  ImageU8(int c_, int h_, int w_, uint8_t fill = 0)
      : c(c_), h(h_), w(w_), v(size_t(c_) * size_t(h_) * size_t(w_), fill) {}

  uint8_t& at(int ci, int yi, int xi) { return v[(size_t(ci) * h + yi) * w + xi]; }
  uint8_t at(int ci, int yi, int xi) const { return v[(size_t(ci) * h + yi) * w + xi]; }
};

// Binary per-pixel region annotation (1 = attacked/attackable pixel).
struct RegionMask {
  int width = 0, height = 0;
  std::vector<uint8_t> v;

  RegionMask() = default;
  RegionMask(int width_, int height_, uint8_t fill = 0)
      : width(width_), height(height_), v(size_t(width_) * size_t(height_), fill) {}

  uint8_t& at(int yi, int xi) { return v[size_t(yi) * width + xi]; }
  uint8_t at(int yi, int xi) const { return v[size_t(yi) * width + xi]; }

  long long count() const {
    long long n = 0;
    for (uint8_t b : v) n += b;
    return n;
  }
  bool any() const { return count() > 0; }
};

Tensor to_tensor(const ImageU8& img);
ImageU8 to_image_u8(const Tensor& t);

ImageU8 read_ppm(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& img);

RegionMask read_mask_pgm(const std::string& path);
void write_mask_pgm(const std::string& path, const RegionMask& mask);

}  // namespace rpd
