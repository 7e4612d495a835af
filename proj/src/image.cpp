#include "rpd/image.hpp"

#include <cmath>
#include <fstream>

#include "rpd/common.hpp"

namespace rpd {

Tensor to_tensor(const ImageU8& img) {
  Tensor t(img.c, img.h, img.w);
  for (size_t i = 0; i < img.v.size(); ++i) t.v[i] = img.v[i] / 255.0;
  return t;
}

ImageU8 to_image_u8(const Tensor& t) {
  ImageU8 img(t.c, t.h, t.w);
  for (size_t i = 0; i < t.v.size(); ++i) {
    const double x = std::min(1.0, std::max(0.0, t.v[i]));
    img.v[i] = uint8_t(std::lround(x * 255.0));
  }
  return img;
}

namespace {

int read_pnm_token(std::istream& in, const std::string& path) {
  // Skips whitespace and # comments, then reads one decimal value.
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  require(ch != EOF && std::isdigit(ch), path + ": malformed PNM header");
  long value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    require(value <= 1 << 20, path + ": PNM header value out of range");
    ch = in.get();
  }
  return int(value);
}

void read_pnm_header(std::istream& in, const std::string& path, const char* magic, int& w, int& h) {
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  require(in.good() && m0 == magic[0] && m1 == magic[1],
          path + ": not a " + magic + " file");
  w = read_pnm_token(in, path);
  h = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  require(w > 0 && h > 0, path + ": bad dimensions");
  require(maxval == 255, path + ": only maxval 255 supported");
}

}  // namespace

ImageU8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), path + ": cannot open");
  int w = 0, h = 0;
  read_pnm_header(in, path, "P6", w, h);
  std::vector<uint8_t> raw(size_t(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  require(size_t(in.gcount()) == raw.size(), path + ": truncated pixel data");
  ImageU8 img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = raw[(size_t(y) * w + x) * 3 + size_t(c)];
  return img;
}

void write_ppm(const std::string& path, const ImageU8& img) {
  require(img.c == 3, path + ": PPM requires 3 channels");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), path + ": cannot open for writing");
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<uint8_t> raw(size_t(img.w) * img.h * 3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) raw[(size_t(y) * img.w + x) * 3 + size_t(c)] = img.at(c, y, x);
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  require(out.good(), path + ": write failed");
}

RegionMask read_mask_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), path + ": cannot open");
  int w = 0, h = 0;
  read_pnm_header(in, path, "P5", w, h);
  std::vector<uint8_t> raw(size_t(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  require(size_t(in.gcount()) == raw.size(), path + ": truncated pixel data");
  RegionMask mask(w, h);
  for (size_t i = 0; i < raw.size(); ++i) mask.v[i] = raw[i] >= 128 ? 1 : 0;
  return mask;
}

void write_mask_pgm(const std::string& path, const RegionMask& mask) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), path + ": cannot open for writing");
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<uint8_t> raw(mask.v.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = mask.v[i] ? 255 : 0;
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  require(out.good(), path + ": write failed");
}

}  // namespace rpd
