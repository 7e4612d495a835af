#include "rpd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace rpd::kern {

namespace {

inline double conv_pixel(const double* in, int ih, int iw, int icpg, int ic0,
                         const double* wo, int kh, int kw, int iy0, int ix0) {
  double acc = 0.0;
  for (int icg = 0; icg < icpg; ++icg) {
    const double* ip = in + size_t(ic0 + icg) * ih * iw;
    const double* wp = wo + size_t(icg) * kh * kw;
    const int ky0 = std::max(0, -iy0), ky1 = std::min(kh, ih - iy0);
    const int kx0 = std::max(0, -ix0), kx1 = std::min(kw, iw - ix0);
    for (int ky = ky0; ky < ky1; ++ky) {
      const double* irow = ip + size_t(iy0 + ky) * iw + ix0;
      const double* wrow = wp + size_t(ky) * kw;
      double a0 = 0.0, a1 = 0.0;
      int kx = kx0;
      for (; kx + 1 < kx1; kx += 2) {
        a0 += irow[kx] * wrow[kx];
        a1 += irow[kx + 1] * wrow[kx + 1];
      }
      if (kx < kx1) a0 += irow[kx] * wrow[kx];
      acc += a0 + a1;
    }
  }
  return acc;
}

struct SampleWeights {
  int i0, i1;
  double w0, w1;
};

// Half-pixel-center source coordinate for output index i, clamped to the
// window [lo, hi) of the source axis.
inline SampleWeights axis_weights(int i, int osize, int lo, int hi) {
  const int span = hi - lo;
  const double coord = (double(i) + 0.5) * double(span) / double(osize) - 0.5 + double(lo);
  const double cmin = double(lo), cmax = double(hi - 1);
  const double cc = std::min(cmax, std::max(cmin, coord));
  int i0 = int(std::floor(cc));
  if (i0 > hi - 2) i0 = hi - 2;
  if (i0 < lo) i0 = lo;
  const double f = std::min(1.0, std::max(0.0, cc - double(i0)));
  return {i0, std::min(i0 + 1, hi - 1), 1.0 - f, f};
}

}  // namespace

void conv2d_fwd(const double* in, int ic, int ih, int iw,
                const double* w, const double* bias, int oc, int kh, int kw,
                int stride, int pad, int groups,
                double* out, int oh, int ow) {
  const int icpg = ic / groups, ocpg = oc / groups;
#pragma omp parallel for schedule(static)
  for (int o = 0; o < oc; ++o) {
    const int g = o / ocpg;
    const double* wo = w + size_t(o) * icpg * kh * kw;
    const double b = bias ? bias[o] : 0.0;
    for (int oy = 0; oy < oh; ++oy) {
      const int iy0 = oy * stride - pad;
      double* orow = out + (size_t(o) * oh + oy) * ow;
      for (int ox = 0; ox < ow; ++ox) {
        orow[ox] = b + conv_pixel(in, ih, iw, icpg, g * icpg, wo, kh, kw, iy0,
                                  ox * stride - pad);
      }
    }
  }
}

void conv2d_bwd_in(const double* dout, int oc, int oh, int ow,
                   const double* w, int kh, int kw,
                   int stride, int pad, int groups,
                   double* din, int ic, int ih, int iw) {
  const int icpg = ic / groups, ocpg = oc / groups;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < ic; ++i) {
    const int g = i / icpg, icg = i % icpg;
    double* drow_base = din + size_t(i) * ih * iw;
    for (int iy = 0; iy < ih; ++iy) {
      for (int ix = 0; ix < iw; ++ix) {
        double acc = 0.0;
        for (int ky = 0; ky < kh; ++ky) {
          const int oyn = iy + pad - ky;
          if (oyn < 0 || oyn % stride) continue;
          const int oy = oyn / stride;
          if (oy >= oh) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int oxn = ix + pad - kx;
            if (oxn < 0 || oxn % stride) continue;
            const int ox = oxn / stride;
            if (ox >= ow) continue;
            for (int ocg = 0; ocg < ocpg; ++ocg) {
              const int o = g * ocpg + ocg;
              acc += dout[(size_t(o) * oh + oy) * ow + ox] *
                     w[((size_t(o) * icpg + icg) * kh + ky) * kw + kx];
            }
          }
        }
        drow_base[size_t(iy) * iw + ix] = acc;
      }
    }
  }
}

void conv2d_bwd_wb(const double* dout, int oc, int oh, int ow,
                   const double* in, int ic, int ih, int iw,
                   int kh, int kw, int stride, int pad, int groups,
                   double* dw, double* db) {
  const int icpg = ic / groups, ocpg = oc / groups;
#pragma omp parallel for schedule(static)
  for (int o = 0; o < oc; ++o) {
    const int g = o / ocpg;
    const double* dop = dout + size_t(o) * oh * ow;
    double bacc = 0.0;
    for (size_t k = 0; k < size_t(oh) * ow; ++k) bacc += dop[k];
    db[o] += bacc;
    for (int icg = 0; icg < icpg; ++icg) {
      const double* ip = in + size_t(g * icpg + icg) * ih * iw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= ih) continue;
            const double* irow = ip + size_t(iy) * iw;
            const double* drow = dop + size_t(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= iw) continue;
              acc += drow[ox] * irow[ix];
            }
          }
          dw[((size_t(o) * icpg + icg) * kh + ky) * kw + kx] += acc;
        }
      }
    }
  }
}

void dense_fwd(const double* x, int n_in, const double* w, const double* b,
               int n_out, double* y) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < n_out; ++m) {
    const double* wrow = w + size_t(m) * n_in;
    double a0 = 0.0, a1 = 0.0;
    int n = 0;
    for (; n + 1 < n_in; n += 2) {
      a0 += wrow[n] * x[n];
      a1 += wrow[n + 1] * x[n + 1];
    }
    if (n < n_in) a0 += wrow[n] * x[n];
    y[m] = a0 + a1 + (b ? b[m] : 0.0);
  }
}

void dense_bwd(const double* dy, const double* x, const double* w,
               int n_in, int n_out, double* dx, double* dw, double* db) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < n_in; ++n) {
    double acc = 0.0;
    for (int m = 0; m < n_out; ++m) acc += dy[m] * w[size_t(m) * n_in + n];
    dx[n] = acc;
  }
#pragma omp parallel for schedule(static)
  for (int m = 0; m < n_out; ++m) {
    double* dwrow = dw + size_t(m) * n_in;
    const double g = dy[m];
    for (int n = 0; n < n_in; ++n) dwrow[n] += g * x[n];
    db[m] += g;
  }
}

void resize_bilinear_fwd(const double* in, int c, int ih, int iw,
                         int x0, int y0, int x1, int y1,
                         double* out, int oh, int ow) {
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    const SampleWeights wy = axis_weights(oy, oh, y0, y1);
    for (int ox = 0; ox < ow; ++ox) {
      const SampleWeights wx = axis_weights(ox, ow, x0, x1);
      for (int ci = 0; ci < c; ++ci) {
        const double* ip = in + size_t(ci) * ih * iw;
        const double v =
            wy.w0 * (wx.w0 * ip[size_t(wy.i0) * iw + wx.i0] +
                     wx.w1 * ip[size_t(wy.i0) * iw + wx.i1]) +
            wy.w1 * (wx.w0 * ip[size_t(wy.i1) * iw + wx.i0] +
                     wx.w1 * ip[size_t(wy.i1) * iw + wx.i1]);
        out[(size_t(ci) * oh + oy) * ow + ox] = v;
      }
    }
  }
}

void resize_bilinear_bwd(const double* dout, int c, int oh, int ow,
                         int x0, int y0, int x1, int y1,
                         double* din, int ih, int iw) {
  // Channels are disjoint write targets, so this is race-free.
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < c; ++ci) {
    double* dp = din + size_t(ci) * ih * iw;
    const double* dop = dout + size_t(ci) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const SampleWeights wy = axis_weights(oy, oh, y0, y1);
      for (int ox = 0; ox < ow; ++ox) {
        const SampleWeights wx = axis_weights(ox, ow, x0, x1);
        const double g = dop[size_t(oy) * ow + ox];
        dp[size_t(wy.i0) * iw + wx.i0] += g * wy.w0 * wx.w0;
        dp[size_t(wy.i0) * iw + wx.i1] += g * wy.w0 * wx.w1;
        dp[size_t(wy.i1) * iw + wx.i0] += g * wy.w1 * wx.w0;
        dp[size_t(wy.i1) * iw + wx.i1] += g * wy.w1 * wx.w1;
      }
    }
  }
}

void affine_warp_fwd(const double* pat, int c, int ph, int pw,
                     const double A[6], const uint8_t* support,
                     double* overlay, int ih, int iw) {
#pragma omp parallel for schedule(static)
  for (int y = 0; y < ih; ++y) {
    for (int x = 0; x < iw; ++x) {
      const size_t pix = size_t(y) * iw + x;
      if (!support[pix]) {
        for (int ci = 0; ci < c; ++ci) overlay[size_t(ci) * ih * iw + pix] = 0.0;
        continue;
      }
      double u = A[0] * x + A[1] * y + A[2];
      double v = A[3] * x + A[4] * y + A[5];
      u = std::min(double(pw - 1), std::max(0.0, u));
      v = std::min(double(ph - 1), std::max(0.0, v));
      int u0 = std::min(pw - 2, int(std::floor(u)));
      int v0 = std::min(ph - 2, int(std::floor(v)));
      if (u0 < 0) u0 = 0;
      if (v0 < 0) v0 = 0;
      const double fu = u - u0, fv = v - v0;
      const int u1 = std::min(u0 + 1, pw - 1), v1 = std::min(v0 + 1, ph - 1);
      for (int ci = 0; ci < c; ++ci) {
        const double* pp = pat + size_t(ci) * ph * pw;
        overlay[size_t(ci) * ih * iw + pix] =
            (1 - fv) * ((1 - fu) * pp[size_t(v0) * pw + u0] + fu * pp[size_t(v0) * pw + u1]) +
            fv * ((1 - fu) * pp[size_t(v1) * pw + u0] + fu * pp[size_t(v1) * pw + u1]);
      }
    }
  }
}

void affine_warp_bwd(const double* doverlay, int c, int ih, int iw,
                     const double A[6], const uint8_t* support,
                     double* dpat, int ph, int pw) {
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < c; ++ci) {
    double* dp = dpat + size_t(ci) * ph * pw;
    const double* dov = doverlay + size_t(ci) * ih * iw;
    for (int y = 0; y < ih; ++y) {
      for (int x = 0; x < iw; ++x) {
        const size_t pix = size_t(y) * iw + x;
        if (!support[pix]) continue;
        double u = A[0] * x + A[1] * y + A[2];
        double v = A[3] * x + A[4] * y + A[5];
        u = std::min(double(pw - 1), std::max(0.0, u));
        v = std::min(double(ph - 1), std::max(0.0, v));
        int u0 = std::min(pw - 2, int(std::floor(u)));
        int v0 = std::min(ph - 2, int(std::floor(v)));
        if (u0 < 0) u0 = 0;
        if (v0 < 0) v0 = 0;
        const double fu = u - u0, fv = v - v0;
        const int u1 = std::min(u0 + 1, pw - 1), v1 = std::min(v0 + 1, ph - 1);
        const double g = dov[pix];
        dp[size_t(v0) * pw + u0] += g * (1 - fv) * (1 - fu);
        dp[size_t(v0) * pw + u1] += g * (1 - fv) * fu;
        dp[size_t(v1) * pw + u0] += g * fv * (1 - fu);
        dp[size_t(v1) * pw + u1] += g * fv * fu;
      }
    }
  }
}

double tv_loss(const double* p, int c, int h, int w) {
  const long long pairs = (long long)c * h * (w - 1) + (long long)c * (h - 1) * w;
  if (pairs <= 0) return 0.0;
  std::vector<double> row_sums(size_t(c) * h, 0.0);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < c; ++ci) {
    const double* cp = p + size_t(ci) * h * w;
    for (int y = 0; y < h; ++y) {
      const double* r = cp + size_t(y) * w;
      double s = 0.0;
      for (int x = 0; x + 1 < w; ++x) s += std::abs(r[x + 1] - r[x]);
      if (y + 1 < h) {
        const double* rn = r + w;
        for (int x = 0; x < w; ++x) s += std::abs(rn[x] - r[x]);
      }
      row_sums[size_t(ci) * h + y] = s;
    }
  }
  double total = 0.0;
  for (double s : row_sums) total += s;
  return total / double(pairs);
}

void tv_grad(const double* p, int c, int h, int w, double scale, double* g) {
  const long long pairs = (long long)c * h * (w - 1) + (long long)c * (h - 1) * w;
  if (pairs <= 0) return;
  const double s = scale / double(pairs);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < c; ++ci) {
    const double* cp = p + size_t(ci) * h * w;
    double* gp = g + size_t(ci) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t i = size_t(y) * w + x;
        double acc = 0.0;
        if (x + 1 < w) {
          const double d = cp[i + 1] - cp[i];
          acc -= (d > 0) - (d < 0);
        }
        if (x > 0) {
          const double d = cp[i] - cp[i - 1];
          acc += (d > 0) - (d < 0);
        }
        if (y + 1 < h) {
          const double d = cp[i + w] - cp[i];
          acc -= (d > 0) - (d < 0);
        }
        if (y > 0) {
          const double d = cp[i] - cp[i - w];
          acc += (d > 0) - (d < 0);
        }
        gp[i] += s * acc;
      }
    }
  }
}

namespace ref {

void conv2d_fwd(const double* in, int ic, int ih, int iw,
                const double* w, const double* bias, int oc, int kh, int kw,
                int stride, int pad, int groups,
                double* out, int oh, int ow) {
  const int icpg = ic / groups, ocpg = oc / groups;
  for (int o = 0; o < oc; ++o) {
    const int g = o / ocpg;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias ? bias[o] : 0.0;
        for (int icg = 0; icg < icpg; ++icg) {
          const int i = g * icpg + icg;
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= ih || ix < 0 || ix >= iw) continue;
              acc += in[(size_t(i) * ih + iy) * iw + ix] *
                     w[((size_t(o) * icpg + icg) * kh + ky) * kw + kx];
            }
          }
        }
        out[(size_t(o) * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

void conv2d_bwd_in(const double* dout, int oc, int oh, int ow,
                   const double* w, int kh, int kw,
                   int stride, int pad, int groups,
                   double* din, int ic, int ih, int iw) {
  const int icpg = ic / groups, ocpg = oc / groups;
  for (size_t k = 0; k < size_t(ic) * ih * iw; ++k) din[k] = 0.0;
  for (int o = 0; o < oc; ++o) {
    const int g = o / ocpg;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double gv = dout[(size_t(o) * oh + oy) * ow + ox];
        for (int icg = 0; icg < icpg; ++icg) {
          const int i = g * icpg + icg;
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= ih || ix < 0 || ix >= iw) continue;
              din[(size_t(i) * ih + iy) * iw + ix] +=
                  gv * w[((size_t(o) * icpg + icg) * kh + ky) * kw + kx];
            }
          }
        }
      }
    }
  }
}

void conv2d_bwd_wb(const double* dout, int oc, int oh, int ow,
                   const double* in, int ic, int ih, int iw,
                   int kh, int kw, int stride, int pad, int groups,
                   double* dw, double* db) {
  const int icpg = ic / groups, ocpg = oc / groups;
  for (int o = 0; o < oc; ++o) {
    const int g = o / ocpg;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double gv = dout[(size_t(o) * oh + oy) * ow + ox];
        db[o] += gv;
        for (int icg = 0; icg < icpg; ++icg) {
          const int i = g * icpg + icg;
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= ih || ix < 0 || ix >= iw) continue;
              dw[((size_t(o) * icpg + icg) * kh + ky) * kw + kx] +=
                  gv * in[(size_t(i) * ih + iy) * iw + ix];
            }
          }
        }
      }
    }
  }
}

void dense_fwd(const double* x, int n_in, const double* w, const double* b,
               int n_out, double* y) {
  for (int m = 0; m < n_out; ++m) {
    double acc = b ? b[m] : 0.0;
    for (int n = 0; n < n_in; ++n) acc += w[size_t(m) * n_in + n] * x[n];
    y[m] = acc;
  }
}

void resize_bilinear_fwd(const double* in, int c, int ih, int iw,
                         int x0, int y0, int x1, int y1,
                         double* out, int oh, int ow) {
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const SampleWeights wy = axis_weights(oy, oh, y0, y1);
        const SampleWeights wx = axis_weights(ox, ow, x0, x1);
        const double* ip = in + size_t(ci) * ih * iw;
        out[(size_t(ci) * oh + oy) * ow + ox] =
            wy.w0 * (wx.w0 * ip[size_t(wy.i0) * iw + wx.i0] +
                     wx.w1 * ip[size_t(wy.i0) * iw + wx.i1]) +
            wy.w1 * (wx.w0 * ip[size_t(wy.i1) * iw + wx.i0] +
                     wx.w1 * ip[size_t(wy.i1) * iw + wx.i1]);
      }
    }
  }
}

void affine_warp_fwd(const double* pat, int c, int ph, int pw,
                     const double A[6], const uint8_t* support,
                     double* overlay, int ih, int iw) {
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < ih; ++y) {
      for (int x = 0; x < iw; ++x) {
        const size_t pix = size_t(y) * iw + x;
        double val = 0.0;
        if (support[pix]) {
          double u = A[0] * x + A[1] * y + A[2];
          double v = A[3] * x + A[4] * y + A[5];
          u = std::min(double(pw - 1), std::max(0.0, u));
          v = std::min(double(ph - 1), std::max(0.0, v));
          int u0 = std::min(pw - 2, int(std::floor(u)));
          int v0 = std::min(ph - 2, int(std::floor(v)));
          if (u0 < 0) u0 = 0;
          if (v0 < 0) v0 = 0;
          const double fu = u - u0, fv = v - v0;
          const int u1 = std::min(u0 + 1, pw - 1), v1 = std::min(v0 + 1, ph - 1);
          const double* pp = pat + size_t(ci) * ph * pw;
          val = (1 - fv) * ((1 - fu) * pp[size_t(v0) * pw + u0] + fu * pp[size_t(v0) * pw + u1]) +
                fv * ((1 - fu) * pp[size_t(v1) * pw + u0] + fu * pp[size_t(v1) * pw + u1]);
        }
        overlay[size_t(ci) * ih * iw + pix] = val;
      }
    }
  }
}

double tv_loss(const double* p, int c, int h, int w) {
  double total = 0.0;
  long long pairs = 0;
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = p[(size_t(ci) * h + y) * w + x];
        if (x + 1 < w) {
          total += std::abs(p[(size_t(ci) * h + y) * w + x + 1] - v);
          ++pairs;
        }
        if (y + 1 < h) {
          total += std::abs(p[(size_t(ci) * h + y + 1) * w + x] - v);
          ++pairs;
        }
      }
    }
  }
  return pairs ? total / double(pairs) : 0.0;
}

}  // namespace ref

}  // namespace rpd::kern
