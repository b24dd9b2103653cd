#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "clsr/config.hpp"
#include "clsr/nn.hpp"

namespace clsr {

/// Residual CNN super-resolution branch:
///
///   shallow 3x3 conv (3 -> c)
///   stages of ResBlocks (stride 1, spatial size preserved)
///   log2(s) x [conv c -> 4c, pixel shuffle x2], conv c -> 3
///   + bilinear upsample of the input RGB patch
///
/// Used with full width as the base branch, with c' channels as the PIM
/// branch, and head-less as the GCM feature extractor.
template <class T>
class Backbone {
 public:
  /// Per-stage hook, applied to the stage output in list order.
  using Fuser = std::function<Var<T>(int stage, const Var<T>& z)>;

  Backbone() = default;
  Backbone(const BackboneConfig& cfg, int channels, ParamStore<T>& store, const std::string& prefix,
           std::mt19937_64& rng, bool with_head = true);

  int channels() const { return channels_; }
  int stages() const { return static_cast<int>(stages_.size()); }
  int scale() const { return scale_; }
  const std::vector<int>& blocks_per_stage() const { return blocks_; }

  Var<T> shallow_extract(const Var<T>& rgb) const;
  Var<T> run_stage(const Var<T>& z, int stage) const;
  /// Head output at s x the spatial size of z; `rgb` supplies the global
  /// residual and must match z spatially.
  Var<T> upsample_head(const Var<T>& z, const Var<T>& rgb) const;

  Var<T> forward_with_fusion(const Var<T>& rgb, const std::vector<Fuser>& fusers) const;
  Var<T> forward(const Var<T>& rgb) const { return forward_with_fusion(rgb, {}); }

  /// Shallow conv plus the first stage; the GCM extractor's computation.
  Var<T> extract_first_stage(const Var<T>& rgb) const { return run_stage(shallow_extract(rgb), 0); }

  std::vector<Conv2d<T>*> convs();

 private:
  int channels_ = 0;
  int scale_ = 1;
  bool global_residual_ = true;
  std::vector<int> blocks_;
  Conv2d<T> shallow_;
  std::vector<std::vector<ResBlock<T>>> stages_;
  std::vector<Conv2d<T>> up_;
  Conv2d<T> tail_;
  bool has_head_ = true;
};

}  // namespace clsr
