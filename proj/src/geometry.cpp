#include "rpd/geometry.hpp"

#include <cstdio>

#include "rpd/kernels.hpp"

namespace rpd {

std::string_view grid_kind_name(GridKind k) {
  return k == GridKind::Even ? "even" : "random";
}

GridKind grid_kind_from_name(std::string_view name) {
  if (name == "even") return GridKind::Even;
  if (name == "random") return GridKind::Random;
  fail("unknown grid kind: " + std::string(name));
}

void validate_grid(const PatchGrid& g) {
  require(g.width > 0 && g.height > 0, "grid: non-positive dimensions");
  require(0 < g.x1 && g.x1 < g.x2 && g.x2 < g.width, "grid: column cuts out of order");
  require(0 < g.y1 && g.y1 < g.y2 && g.y2 < g.height, "grid: row cuts out of order");
}

PatchGrid even_split(int width, int height) {
  require(width >= 9 && height >= 9, "even_split: dimension too small for a 3x3 grid");
  PatchGrid g;
  g.kind = GridKind::Even;
  g.width = width;
  g.height = height;
  g.x1 = width / 3;
  g.x2 = 2 * width / 3;
  g.y1 = height / 3;
  g.y2 = 2 * height / 3;
  validate_grid(g);
  return g;
}

namespace {

// Integer points of [d/6, d/2] for the first cut and (d/2, 5d/6] for the second.
void cut_ranges(int d, int& lo1, int& hi1, int& lo2, int& hi2) {
  lo1 = (d + 5) / 6;
  hi1 = d / 2;
  lo2 = d / 2 + 1;
  hi2 = 5 * d / 6;
  require(lo1 <= hi1 && lo2 <= hi2, "random_split: empty cut interval");
}

}  // namespace

PatchGrid random_split(int width, int height, Rng& rng) {
  require(width >= 12 && height >= 12, "random_split: dimension too small for a 3x3 grid");
  PatchGrid g;
  g.kind = GridKind::Random;
  g.width = width;
  g.height = height;
  int lo1, hi1, lo2, hi2;
  cut_ranges(width, lo1, hi1, lo2, hi2);
  g.x1 = rng.uniform_int(lo1, hi1);
  g.x2 = rng.uniform_int(lo2, hi2);
  cut_ranges(height, lo1, hi1, lo2, hi2);
  g.y1 = rng.uniform_int(lo1, hi1);
  g.y2 = rng.uniform_int(lo2, hi2);
  validate_grid(g);
  return g;
}

std::array<Rect, 9> grid_rects(const PatchGrid& g) {
  validate_grid(g);
  const int xs[4] = {0, g.x1, g.x2, g.width};
  const int ys[4] = {0, g.y1, g.y2, g.height};
  std::array<Rect, 9> out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      out[size_t(r * 3 + c)] = Rect{xs[c], ys[r], xs[c + 1], ys[r + 1]};
  return out;
}

Tensor extract_and_resize(const Tensor& image, const Rect& rect, int out_size) {
  require(out_size > 0, "extract_and_resize: non-positive output size");
  require(rect.x0 >= 0 && rect.y0 >= 0 && rect.x1 <= image.w && rect.y1 <= image.h &&
              rect.x0 < rect.x1 && rect.y0 < rect.y1,
          "extract_and_resize: rect out of bounds");
  Tensor out(image.c, out_size, out_size);
  kern::resize_bilinear_fwd(image.data(), image.c, image.h, image.w, rect.x0, rect.y0, rect.x1,
                            rect.y1, out.data(), out_size, out_size);
  return out;
}

void extract_and_resize_backward(const Tensor& dpatch, const Rect& rect, Tensor& dimage) {
  require(dpatch.c == dimage.c, "extract_and_resize_backward: channel mismatch");
  require(rect.x0 >= 0 && rect.y0 >= 0 && rect.x1 <= dimage.w && rect.y1 <= dimage.h &&
              rect.x0 < rect.x1 && rect.y0 < rect.y1,
          "extract_and_resize_backward: rect out of bounds");
  kern::resize_bilinear_bwd(dpatch.data(), dpatch.c, dpatch.h, dpatch.w, rect.x0, rect.y0, rect.x1,
                            rect.y1, dimage.data(), dimage.h, dimage.w);
}

std::string grid_to_record(const PatchGrid& g) {
  validate_grid(g);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "{%s,%d,%d,%d,%d,%d,%d}",
                std::string(grid_kind_name(g.kind)).c_str(), g.width, g.height, g.x1, g.x2, g.y1,
                g.y2);
  return std::string(buf);
}

PatchGrid grid_from_record(std::string_view record) {
  require(record.size() >= 2 && record.front() == '{' && record.back() == '}',
          "grid record: missing braces");
  std::string body(record.substr(1, record.size() - 2));
  std::vector<std::string> part;
  size_t pos = 0;
  while (true) {
    const size_t comma = body.find(',', pos);
    part.push_back(body.substr(pos, comma == std::string::npos ? comma : comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  require(part.size() == 7, "grid record: want 7 fields");
  PatchGrid g;
  g.kind = grid_kind_from_name(part[0]);
  int* nums[6] = {&g.width, &g.height, &g.x1, &g.x2, &g.y1, &g.y2};
  for (int i = 0; i < 6; ++i) {
    try {
      size_t used = 0;
      *nums[i] = std::stoi(part[size_t(i + 1)], &used);
      require(used == part[size_t(i + 1)].size(), "trailing junk");
    } catch (const std::exception&) {
      fail("grid record: bad integer field '" + part[size_t(i + 1)] + "'");
    }
  }
  validate_grid(g);
  return g;
}

}  // namespace rpd
