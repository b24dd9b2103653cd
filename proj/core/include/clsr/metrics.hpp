#pragma once

#include <limits>

#include "clsr/image.hpp"

namespace clsr {

/// PSNR returned for identical inputs.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) over every pixel and channel; no border is excluded.
double psnr(const Image& a, const Image& b, double peak = 1.0);

/// Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows, K1 = 0.01,
/// K2 = 0.03, dynamic range 1. RGB inputs are reduced to BT.601 luma first;
/// single-channel inputs are used directly.
double ssim(const Image& a, const Image& b);

inline constexpr int kSsimWindow = 11;

}  // namespace clsr
