#pragma once

#include <array>
#include <string>
#include <string_view>

#include "rpd/common.hpp"
#include "rpd/tensor.hpp"

namespace rpd {

struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long long area() const { return (long long)width() * height(); }
  bool operator==(const Rect&) const = default;
};

enum class GridKind { Even, Random };

std::string_view grid_kind_name(GridKind k);
GridKind grid_kind_from_name(std::string_view name);

// 3x3 partition of a width x height image by two column cuts and two row cuts.
struct PatchGrid {
  GridKind kind = GridKind::Even;
  int width = 0, height = 0;
  int x1 = 0, x2 = 0;
  int y1 = 0, y2 = 0;

  bool operator==(const PatchGrid&) const = default;
};

void validate_grid(const PatchGrid& g);

// Cuts at floored thirds. Requires width, height >= 9.
PatchGrid even_split(int width, int height);

// Cuts drawn uniformly from the integer points of x1 in [W/6, W/2],
// x2 in (W/2, 5W/6] and the analogous H intervals. Requires width, height >= 12.
PatchGrid random_split(int width, int height, Rng& rng);

// The nine cells in row-major order (top-left first).
std::array<Rect, 9> grid_rects(const PatchGrid& g);

// Crop rect out of image and bilinearly resize to out_size x out_size.
Tensor extract_and_resize(const Tensor& image, const Rect& rect, int out_size);

// Accumulates d(loss)/d(image) given d(loss)/d(patch) from extract_and_resize.
void extract_and_resize_backward(const Tensor& dpatch, const Rect& rect, Tensor& dimage);

// Plain-text record {kind,W,H,x1,x2,y1,y2} embedded in run manifests.
std::string grid_to_record(const PatchGrid& g);
PatchGrid grid_from_record(std::string_view record);

}  // namespace rpd
