#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

// Plain-array layers with hand-written backward passes. Tensors are flat
// [channel][row][col]. Backward functions accumulate into parameter
// gradients and overwrite the input gradient.
namespace fcplan::nn {

// 3x3 convolution, stride 1, zero padding 1. w is [co][ci][3][3].
inline void conv3x3_forward(std::span<const double> in, int cin, int H, int W, std::span<const double> w,
                            std::span<const double> b, int cout, std::span<double> out) {
  for (int co = 0; co < cout; ++co)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = b[co];
        for (int ci = 0; ci < cin; ++ci) {
          const double* wk = &w[((co * cin + ci) * 3) * 3];
          const double* im = &in[ci * H * W];
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = x + kx - 1;
              if (ix < 0 || ix >= W) continue;
              acc += wk[ky * 3 + kx] * im[iy * W + ix];
            }
          }
        }
        out[(co * H + y) * W + x] = acc;
      }
}

inline void conv3x3_backward(std::span<const double> in, int cin, int H, int W, std::span<const double> w, int cout,
                             std::span<const double> dout, std::span<double> din, std::span<double> dw,
                             std::span<double> db) {
  std::fill(din.begin(), din.end(), 0.0);
  for (int co = 0; co < cout; ++co)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double g = dout[(co * H + y) * W + x];
        if (g == 0.0) continue;
        db[co] += g;
        for (int ci = 0; ci < cin; ++ci) {
          const std::size_t k0 = ((co * cin + ci) * 3) * 3;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = x + kx - 1;
              if (ix < 0 || ix >= W) continue;
              const std::size_t p = (ci * H + iy) * W + ix;
              dw[k0 + ky * 3 + kx] += g * in[p];
              din[p] += g * w[k0 + ky * 3 + kx];
            }
          }
        }
      }
}

inline void relu_forward(std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

// Gradient is passed where the input was strictly positive.
inline void relu_backward(std::span<const double> in, std::span<const double> dout, std::span<double> din) {
  for (std::size_t i = 0; i < in.size(); ++i) din[i] = in[i] > 0.0 ? dout[i] : 0.0;
}

inline int pooled(int n) { return (n + 1) / 2; }

// 2x2 max pooling, stride 2, partial windows kept at odd edges. arg records
// the flat input index of each maximum; on ties the first in row-major order
// wins.
inline void maxpool2_forward(std::span<const double> in, int C, int H, int W, std::span<double> out,
                             std::span<int> arg) {
  const int Ho = pooled(H), Wo = pooled(W);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int x = 0; x < Wo; ++x) {
        int best = -1;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = 2 * y + dy, ix = 2 * x + dx;
            if (iy >= H || ix >= W) continue;
            const int p = (c * H + iy) * W + ix;
            if (best < 0 || in[p] > in[best]) best = p;
          }
        const int o = (c * Ho + y) * Wo + x;
        out[o] = in[best];
        arg[o] = best;
      }
}

inline void maxpool2_backward(std::span<const int> arg, std::span<const double> dout, std::span<double> din) {
  std::fill(din.begin(), din.end(), 0.0);
  for (std::size_t o = 0; o < dout.size(); ++o) din[arg[o]] += dout[o];
}

// out = W in + b, W is [out][in].
inline void dense_forward(std::span<const double> in, std::span<const double> w, std::span<const double> b,
                          std::span<double> out) {
  const std::size_t n = in.size();
  for (std::size_t o = 0; o < out.size(); ++o) {
    double acc = b[o];
    const double* row = &w[o * n];
    for (std::size_t i = 0; i < n; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

inline void dense_backward(std::span<const double> in, std::span<const double> w, std::span<const double> dout,
                           std::span<double> din, std::span<double> dw, std::span<double> db) {
  const std::size_t n = in.size();
  std::fill(din.begin(), din.end(), 0.0);
  for (std::size_t o = 0; o < dout.size(); ++o) {
    const double g = dout[o];
    db[o] += g;
    if (g == 0.0) continue;
    const double* row = &w[o * n];
    double* drow = &dw[o * n];
    for (std::size_t i = 0; i < n; ++i) {
      drow[i] += g * in[i];
      din[i] += g * row[i];
    }
  }
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inv(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void softplus_forward(std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = softplus(in[i]);
}

inline void softplus_backward(std::span<const double> in, std::span<const double> dout, std::span<double> din) {
  for (std::size_t i = 0; i < in.size(); ++i) din[i] = dout[i] * sigmoid(in[i]);
}

}  // namespace fcplan::nn
