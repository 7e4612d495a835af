#pragma once

#include <cstdint>

namespace rpd::kern {

// Shared-memory parallel kernels. Every kernel writes each output element
// from exactly one thread and accumulates in a fixed order, so results are
// reproducible for any thread count. The rpd::kern::ref namespace holds
// naive serial implementations used as correctness references by the tests
// and the benchmark tool.

// Convolution. Layout: in [ic][ih][iw], w [oc][ic/groups][kh][kw], out
// [oc][oh][ow]. groups must divide both ic and oc.
void conv2d_fwd(const double* in, int ic, int ih, int iw,
                const double* w, const double* bias, int oc, int kh, int kw,
                int stride, int pad, int groups,
                double* out, int oh, int ow);

void conv2d_bwd_in(const double* dout, int oc, int oh, int ow,
                   const double* w, int kh, int kw,
                   int stride, int pad, int groups,
                   double* din, int ic, int ih, int iw);

// Accumulates into dw/db.
void conv2d_bwd_wb(const double* dout, int oc, int oh, int ow,
                   const double* in, int ic, int ih, int iw,
                   int kh, int kw, int stride, int pad, int groups,
                   double* dw, double* db);

// y[m] = sum_n w[m*n_in + n] x[n] + b[m]
void dense_fwd(const double* x, int n_in, const double* w, const double* b,
               int n_out, double* y);

// dx is written, dw/db accumulate.
void dense_bwd(const double* dy, const double* x, const double* w,
               int n_in, int n_out, double* dx, double* dw, double* db);

// Crop the window [x0,x1)x[y0,y1) of in and resize to oh x ow with bilinear
// interpolation, half-pixel centers, samples clamped inside the window.
void resize_bilinear_fwd(const double* in, int c, int ih, int iw,
                         int x0, int y0, int x1, int y1,
                         double* out, int oh, int ow);

// Transpose of the above; accumulates into din.
void resize_bilinear_bwd(const double* dout, int c, int oh, int ow,
                         int x0, int y0, int x1, int y1,
                         double* din, int ih, int iw);

// Sample a pattern into image space through an affine map
//   u = A[0]*x + A[1]*y + A[2],  v = A[3]*x + A[4]*y + A[5]
// ((x, y) = image column/row, (u, v) = pattern column/row, pixel-center
// coordinates). Bilinear, clamped to the pattern. Pixels with support == 0
// are written as zero.
void affine_warp_fwd(const double* pat, int c, int ph, int pw,
                     const double A[6], const uint8_t* support,
                     double* overlay, int ih, int iw);

// Transpose; accumulates into dpat.
void affine_warp_bwd(const double* doverlay, int c, int ih, int iw,
                     const double A[6], const uint8_t* support,
                     double* dpat, int ph, int pw);

// Anisotropic total variation: mean of |horizontal diff| + |vertical diff|
// over all adjacent pixel pairs, per channel.
double tv_loss(const double* p, int c, int h, int w);

// Accumulates scale * d(tv)/dp into g.
void tv_grad(const double* p, int c, int h, int w, double scale, double* g);

namespace ref {

void conv2d_fwd(const double* in, int ic, int ih, int iw,
                const double* w, const double* bias, int oc, int kh, int kw,
                int stride, int pad, int groups,
                double* out, int oh, int ow);

void conv2d_bwd_in(const double* dout, int oc, int oh, int ow,
                   const double* w, int kh, int kw,
                   int stride, int pad, int groups,
                   double* din, int ic, int ih, int iw);

void conv2d_bwd_wb(const double* dout, int oc, int oh, int ow,
                   const double* in, int ic, int ih, int iw,
                   int kh, int kw, int stride, int pad, int groups,
                   double* dw, double* db);

void dense_fwd(const double* x, int n_in, const double* w, const double* b,
               int n_out, double* y);

void resize_bilinear_fwd(const double* in, int c, int ih, int iw,
                         int x0, int y0, int x1, int y1,
                         double* out, int oh, int ow);

void affine_warp_fwd(const double* pat, int c, int ph, int pw,
                     const double A[6], const uint8_t* support,
                     double* overlay, int ih, int iw);

double tv_loss(const double* p, int c, int h, int w);

}  // namespace ref

}  // namespace rpd::kern
