#pragma once

#include <algorithm>
#include <vector>

#include "rpd/common.hpp"

namespace rpd {

// Dense CHW tensor of doubles; rows contiguous.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_), v(size_t(c_) * size_t(h_) * size_t(w_), fill) {}

  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  double& at(int ci, int yi, int xi) { return v[(size_t(ci) * h + yi) * w + xi]; }
  double at(int ci, int yi, int xi) const { return v[(size_t(ci) * h + yi) * w + xi]; }

  void zero() { std::fill(v.begin(), v.end(), 0.0); }

  void clamp01() {
    for (double& x : v) x = std::min(1.0, std::max(0.0, x));
  }
};

bool all_finite(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace rpd
