#include "clsr/flops.hpp"

#include "clsr/error.hpp"
#include "clsr/gcm.hpp"
#include "clsr/image.hpp"

namespace clsr {

namespace {

using u64 = std::uint64_t;

u64 bilinear_flops(int channels, int out_h, int out_w) {
  return u64{8} * static_cast<u64>(channels) * static_cast<u64>(out_h) * static_cast<u64>(out_w);
}

u64 matmul_flops(long m, long k, long n) { return u64{2} * static_cast<u64>(m) * k * n; }

Extent padded_extent(const ModelConfig& cfg, Extent roi) {
  const RoiBox w = padded_window({0, 0, roi.height, roi.width}, cfg.pad, cfg.alignment());
  return {w.height, w.width};
}

u64 scale_down_flops(const ModelConfig& cfg, Extent in) {
  const int f = cfg.gcm.factor, c = cfg.backbone.channels;
  const auto g = scaler_geometry(f);
  const int oh = in.height / f, ow = in.width / f;
  return conv_flops(g.kernel, c, c, oh, ow) + bilinear_flops(c, oh, ow);
}

u64 scale_up_flops(const ModelConfig& cfg, Extent in) {
  const int f = cfg.gcm.factor, c = cfg.backbone.channels;
  const auto g = scaler_geometry(f);
  return conv_flops(g.kernel, c, c, in.height, in.width) +
         bilinear_flops(c, in.height * f, in.width * f);
}

}  // namespace

u64 conv_flops(int k, int cin, int cout, int out_h, int out_w) {
  return u64{2} * static_cast<u64>(k) * k * cin * cout * static_cast<u64>(out_h) * out_w;
}

u64 backbone_flops(const BackboneConfig& cfg, int c, Extent in, bool with_head) {
  const int h = in.height, w = in.width;
  u64 total = conv_flops(3, cfg.in_channels, c, h, w);
  for (int b : cfg.blocks_per_stage) total += static_cast<u64>(b) * 2 * conv_flops(3, c, c, h, w);
  if (!with_head) return total;
  int hh = h, ww = w;
  for (int f = cfg.scale; f > 1; f /= 2) {
    total += conv_flops(3, c, 4 * c, hh, ww);
    hh *= 2;
    ww *= 2;
  }
  total += conv_flops(3, c, 3, hh, ww);
  if (cfg.global_residual) total += bilinear_flops(3, hh, ww);
  return total;
}

FlopsBreakdown flops_estimate(const ModelConfig& cfg, Extent roi, Extent context, int n_rois) {
  if (roi.height < 1 || roi.width < 1 || context.height < 1 || context.width < 1 || n_rois < 0) {
    throw ConfigError("flops_estimate: sizes must be positive");
  }
  const int c = cfg.backbone.channels;
  const Extent padded = padded_extent(cfg, roi);
  FlopsBreakdown out;

  u64 per_roi = backbone_flops(cfg.backbone, c, padded);
  if (cfg.gcm.enabled) {
    const int f = cfg.gcm.factor;
    const Extent zd{padded.height / f, padded.width / f};
    const long nq = static_cast<long>(zd.height) * zd.width;
    const long n = static_cast<long>(partition_grid(context.height, context.width, cfg.gcm.r, cfg.gcm.n_max).size());
    const int rd = cfg.gcm.r / f;
    const long nk = n * rd * rd;
    per_roi += scale_down_flops(cfg, padded) + matmul_flops(nq, c, c) + 2 * matmul_flops(nq, nk, c) +
               scale_up_flops(cfg, zd);

    BackboneConfig ecfg = cfg.backbone;
    ecfg.blocks_per_stage = {cfg.backbone.blocks_per_stage.front()};
    const u64 per_patch = backbone_flops(ecfg, c, {cfg.gcm.r, cfg.gcm.r}, false) +
                          scale_down_flops(cfg, {cfg.gcm.r, cfg.gcm.r});
    out.gcm = static_cast<u64>(n) * per_patch + 2 * matmul_flops(nk, c, c);
  }
  if (cfg.pim.enabled) {
    out.pim = backbone_flops(cfg.backbone, cfg.pim.channels(c), context, false);
  }
  out.base = per_roi * static_cast<u64>(n_rois);
  return out;
}

u64 post_crop_flops(const ModelConfig& cfg, Extent context) {
  return backbone_flops(cfg.backbone, cfg.backbone.channels, context);
}

u64 pre_crop_flops(const ModelConfig& cfg, Extent roi) {
  return backbone_flops(cfg.backbone, cfg.backbone.channels, padded_extent(cfg, roi));
}

}  // namespace clsr
