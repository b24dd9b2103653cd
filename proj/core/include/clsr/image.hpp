#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clsr/tensor.hpp"

namespace clsr {

/// Channel-major float image, values in [0,1] for RGB data read from disk.
using Image = Tensor<float>;

/// Integer rectangle in LR pixel coordinates.
struct RoiBox {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  int bottom() const { return top + height; }
  int right() const { return left + width; }
  bool fits(int h, int w) const {
    return top >= 0 && left >= 0 && height >= 1 && width >= 1 && bottom() <= h && right() <= w;
  }
  RoiBox scaled(int s) const { return {top * s, left * s, height * s, width * s}; }
  friend bool operator==(const RoiBox&, const RoiBox&) = default;
};

std::string to_string(const RoiBox& box);

/// LR context with its HR ground truth; hr is exactly `scale` times lr.
struct SamplePair {
  Image lr;
  Image hr;
  int scale = 4;
};

// PNG I/O (8-bit RGB only). Values are byte / 255 on load and
// round(clamp(v) * 255) on save.
Image load_png(const std::filesystem::path& path);
Image decode_png(std::span<const std::uint8_t> bytes);
void save_png(const Image& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& img);

/// Separable bicubic resample (a = -0.5), anti-aliased when shrinking,
/// edge-replicated taps; output clamped to [0,1].
Image resize_bicubic(const Image& img, int out_h, int out_w);

/// Bicubic degradation HR -> LR by integer factor.
Image degrade(const Image& hr, int scale);

/// Precomputed half-pixel linear interpolation taps for one axis.
struct LinearTaps {
  std::vector<int> i0, i1;
  std::vector<float> w0, w1;
  static LinearTaps make(int in, int out);
};

/// Bilinear resample with half-pixel centers and edge clamping (no anti-aliasing).
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& img, int out_h, int out_w);

Image clamp01(Image img);

/// Exact sub-array copy; throws BoundsError when the box leaves the image.
template <class T>
Tensor<T> crop(const Tensor<T>& img, const RoiBox& box);

/// HR crop matching an LR box at scale s.
template <class T>
Tensor<T> crop_hr(const Tensor<T>& img, const RoiBox& box, int s) {
  return crop(img, box.scaled(s));
}

/// Mirror an index into [0, n) without repeating the edge sample
/// (-1 -> 1, n -> n-2); valid for any offset.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Window of the given box that may extend past the borders; outside pixels
/// are reflections of the inside.
template <class T>
Tensor<T> reflect_window(const Tensor<T>& img, const RoiBox& window);

struct PaddedPatch {
  Image patch;
  /// The padded window in context coordinates (may start negative).
  RoiBox outer;
  /// The original ROI inside `patch`.
  RoiBox inner;
};

/// Geometry of the ROI grown by `pad` on each side. The bottom/right edge is
/// further extended so both sides become multiples of `align`.
RoiBox padded_window(const RoiBox& box, int pad, int align = 1);

PaddedPatch pad_from_context(const Image& context, const RoiBox& box, int pad, int align = 1);

}  // namespace clsr
