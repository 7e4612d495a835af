// Compares the OpenMP kernels against the serial reference implementations
// and reports model-level forward/backward throughput.

#include <chrono>
#include <cstdio>
#include <vector>

#include "rpd/common.hpp"
#include "rpd/embedding.hpp"
#include "rpd/kernels.hpp"
#include "rpd/zoo.hpp"

using namespace rpd;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<double> randv(size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

template <typename F>
double bench(int iters, F&& fn) {
  fn();  // warmup
  const auto t0 = Clock::now();
  for (int i = 0; i < iters; ++i) fn();
  return ms_since(t0) / iters;
}

void bench_conv(const char* name, int ic, int hw, int oc, int k, int stride, int pad,
                int groups, int iters) {
  Rng rng(1);
  const int oh = (hw + 2 * pad - k) / stride + 1;
  auto in = randv(size_t(ic) * hw * hw, rng);
  auto w = randv(size_t(oc) * (ic / groups) * k * k, rng);
  auto b = randv(size_t(oc), rng);
  std::vector<double> out(size_t(oc) * oh * oh);

  const double par = bench(iters, [&] {
    kern::conv2d_fwd(in.data(), ic, hw, hw, w.data(), b.data(), oc, k, k, stride, pad, groups,
                     out.data(), oh, oh);
  });
  const double ser = bench(iters, [&] {
    kern::ref::conv2d_fwd(in.data(), ic, hw, hw, w.data(), b.data(), oc, k, k, stride, pad,
                          groups, out.data(), oh, oh);
  });
  const double macs = double(oc) * oh * oh * (ic / groups) * k * k;
  std::printf("%-28s %8.3f ms omp  %8.3f ms ref  %6.2fx  %7.1f MMAC/s\n", name, par, ser,
              ser / par, macs / par / 1e3);
}

void bench_models() {
  Rng rng(2);
  Tensor img(3, kInputSize, kInputSize);
  for (double& v : img.v) v = rng.uniform(0, 1);

  {
    auto trunk = make_embed_trunk(rng);
    const double fwd = bench(5, [&] { trunk->forward(img); });
    Tensor dy(kEmbedDim, 1, 1, 0.01);
    trunk->forward(img);
    const double bwd = bench(5, [&] { trunk->backward(dy); });
    std::printf("%-28s %8.3f ms fwd  %8.3f ms bwd\n", "embed trunk 224", fwd, bwd);
  }
  for (const auto& id : backbone_ids()) {
    Rng brng(3);
    auto net = make_backbone(id, brng);
    const double fwd = bench(5, [&] { net->forward(img); });
    Tensor dy(2, 1, 1, 0.01);
    net->forward(img);
    const double bwd = bench(5, [&] { net->backward(dy); });
    std::printf("%-28s %8.3f ms fwd  %8.3f ms bwd  (%zu params)\n", id.c_str(), fwd, bwd,
                param_count(*net));
  }
}

}  // namespace

int main() {
  std::printf("== conv kernels (omp vs serial reference) ==\n");
  bench_conv("stem 3->12 k8 s8 @224", 3, 224, 12, 8, 8, 0, 1, 10);
  bench_conv("conv 16->16 k3 s1 @28", 16, 28, 16, 3, 1, 1, 1, 20);
  bench_conv("conv 24->24 k3 s2 @14", 24, 14, 24, 3, 2, 1, 1, 50);
  bench_conv("depthwise 24 k3 s1 @28", 24, 28, 24, 3, 1, 1, 24, 50);
  std::printf("\n== model-level timings ==\n");
  bench_models();
  return 0;
}
