#pragma once

// Independent double-precision reference computations, written without
// reusing any library internals.

#include <cmath>
#include <vector>

#include "clsr/image.hpp"

namespace clsr::oracle {

inline double psnr(const Image& a, const Image& b) {
  long double sse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - static_cast<long double>(b[i]);
    sse += d * d;
  }
  const long double mse = sse / static_cast<long double>(a.size());
  return static_cast<double>(-10.0L * std::log10(mse));
}

/// Direct 11x11 window sums with a 2-D Gaussian, one window at a time.
inline double ssim(const Image& a, const Image& b) {
  const int h = a.height(), w = a.width();
  auto luma = [](const Image& img, int y, int x) {
    return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
  };
  double g[11][11];
  double gs = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
      gs += g[i][j];
    }
  const double c1 = 0.0001, c2 = 0.0009;
  double total = 0;
  int count = 0;
  for (int y0 = 0; y0 + 11 <= h; ++y0) {
    for (int x0 = 0; x0 + 11 <= w; ++x0) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i][j] / gs;
          mx += wt * luma(a, y0 + i, x0 + j);
          my += wt * luma(b, y0 + i, x0 + j);
        }
      double vx = 0, vy = 0, cov = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i][j] / gs;
          const double dx = luma(a, y0 + i, x0 + j) - mx;
          const double dy = luma(b, y0 + i, x0 + j) - my;
          vx += wt * dx * dx;
          vy += wt * dy * dy;
          cov += wt * dx * dy;
        }
      total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

}  // namespace clsr::oracle
