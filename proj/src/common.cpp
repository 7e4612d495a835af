#include "rpd/common.hpp"

#include <cmath>
#include <cstdio>

#include "rpd/tensor.hpp"

namespace rpd {

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return std::string(buf);
}

double Rng::normal(double mean, double stddev) {
  // Box-Muller; one value per call keeps the stream layout simple.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * M_PI * u2);
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  require(k >= 0 && k <= n, "sample_without_replacement: k out of range");
  std::vector<int> pool(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool[size_t(i)] = i;
  std::vector<int> out;
  out.reserve(size_t(k));
  for (int i = 0; i < k; ++i) {
    const int j = uniform_int(i, n - 1);
    std::swap(pool[size_t(i)], pool[size_t(j)]);
    out.push_back(pool[size_t(i)]);
  }
  return out;
}

bool all_finite(const Tensor& t) {
  for (double x : t.v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

}  // namespace rpd
