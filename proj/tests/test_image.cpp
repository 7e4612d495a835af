#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "rpd/common.hpp"
#include "rpd/image.hpp"

using namespace rpd;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/rpd_img_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("u8 and tensor conversions round-trip every byte value") {
  ImageU8 img(3, 2, 43);
  for (int i = 0; i < 256; ++i) img.v[size_t(i)] = uint8_t(i);
  auto t = to_tensor(img);
  CHECK(t.v[0] == 0.0);
  CHECK(t.v[255] == 1.0);
  auto back = to_image_u8(t);
  for (size_t i = 0; i < img.v.size(); ++i) CHECK(back.v[i] == img.v[i]);
}

TEST_CASE("to_image_u8 clamps out-of-range values") {
  Tensor t(1, 1, 3);
  t.v = {-0.5, 0.5, 1.7};
  auto img = to_image_u8(t);
  CHECK(img.v[0] == 0);
  CHECK(img.v[1] == 128);
  CHECK(img.v[2] == 255);
}

TEST_CASE("ppm io round-trips") {
  Rng rng(3);
  ImageU8 img(3, 13, 17);
  for (auto& b : img.v) b = uint8_t(rng.uniform_int(0, 255));
  TempFile f("rt.ppm");
  write_ppm(f.path, img);
  auto back = read_ppm(f.path);
  CHECK(back.c == 3);
  CHECK(back.h == 13);
  CHECK(back.w == 17);
  CHECK(back.v == img.v);
}

TEST_CASE("ppm reader accepts comments and rejects malformed files") {
  TempFile f("hdr.ppm");
  {
    std::ofstream out(f.path, std::ios::binary);
    out << "P6\n# a comment\n2 1\n# another\n255\n";
    const char px[6] = {0, 1, 2, 3, 4, 5};
    out.write(px, 6);
  }
  auto img = read_ppm(f.path);
  CHECK(img.w == 2);
  CHECK(img.at(2, 0, 1) == 5);

  CHECK_THROWS_AS(read_ppm("/nonexistent/nope.ppm"), Error);

  TempFile bad("bad.ppm");
  {
    std::ofstream out(bad.path, std::ios::binary);
    out << "P5\n2 1\n255\n";
    out.write("ab", 2);
  }
  CHECK_THROWS_AS(read_ppm(bad.path), Error);

  TempFile trunc("trunc.ppm");
  {
    std::ofstream out(trunc.path, std::ios::binary);
    out << "P6\n4 4\n255\n";
    out.write("abc", 3);
  }
  CHECK_THROWS_AS(read_ppm(trunc.path), Error);

  TempFile deep("deep.ppm");
  {
    std::ofstream out(deep.path, std::ios::binary);
    out << "P6\n2 1\n65535\n";
  }
  CHECK_THROWS_AS(read_ppm(deep.path), Error);
}

TEST_CASE("mask pgm io round-trips binary masks") {
  RegionMask mask(9, 7);
  for (size_t i = 0; i < mask.v.size(); i += 3) mask.v[i] = 1;
  TempFile f("mask.pgm");
  write_mask_pgm(f.path, mask);
  auto back = read_mask_pgm(f.path);
  CHECK(back.width == 9);
  CHECK(back.height == 7);
  CHECK(back.v == mask.v);
  CHECK(back.count() == mask.count());
}

TEST_CASE("mask count and any") {
  RegionMask mask(4, 4);
  CHECK(mask.count() == 0);
  CHECK(!mask.any());
  mask.at(3, 2) = 1;
  CHECK(mask.count() == 1);
  CHECK(mask.any());
}
