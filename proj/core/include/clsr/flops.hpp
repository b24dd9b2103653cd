#pragma once

#include <cstdint>

#include "clsr/config.hpp"

namespace clsr {

/// FLOPs split into the per-ROI base branch and the once-per-context GCM
/// and PIM branches. 1 MAC = 2 FLOPs; bilinear resampling = 8 FLOPs per
/// output element; ReLU, adds and copies are free.
struct FlopsBreakdown {
  std::uint64_t base = 0;
  std::uint64_t gcm = 0;
  std::uint64_t pim = 0;

  std::uint64_t total() const { return base + gcm + pim; }
  double gflops() const { return static_cast<double>(total()) * 1e-9; }

  friend bool operator==(const FlopsBreakdown&, const FlopsBreakdown&) = default;
};

struct Extent {
  int height = 0;
  int width = 0;
};

/// 2 * k^2 * cin * cout * out_h * out_w.
std::uint64_t conv_flops(int k, int cin, int cout, int out_h, int out_w);

/// Backbone forward on an h x w input, head included.
std::uint64_t backbone_flops(const BackboneConfig& cfg, int channels, Extent in, bool with_head = true);

/// Analytic cost of restoring n_rois ROIs of the given size from one context.
/// With GCM and PIM disabled this is the pre-cropping cost.
FlopsBreakdown flops_estimate(const ModelConfig& cfg, Extent roi, Extent context, int n_rois = 1);

/// Base branch on the whole context (the post-cropping cost).
std::uint64_t post_crop_flops(const ModelConfig& cfg, Extent context);

/// Base branch alone on the padded ROI.
std::uint64_t pre_crop_flops(const ModelConfig& cfg, Extent roi);

}  // namespace clsr
