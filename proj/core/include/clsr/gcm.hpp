#pragma once

#include <random>
#include <string>
#include <vector>

#include "clsr/backbone.hpp"
#include "clsr/config.hpp"
#include "clsr/nn.hpp"

namespace clsr {

struct PatchCenter {
  double row = 0;
  double col = 0;
  friend bool operator==(const PatchCenter&, const PatchCenter&) = default;
};

/// One sampled cell of the context partition.
struct GridPatch {
  RoiBox box;
  PatchCenter center;
};

/// Non-overlapping r x r grid over an H x W context, remainder dropped.
/// When the grid exceeds n_max cells, a stride-k subgrid is kept with the
/// smallest k such that ceil(gh/k) * ceil(gw/k) <= n_max.
std::vector<GridPatch> partition_grid(int height, int width, int r, int n_max);

/// Raw extractor features m_i and where they came from.
template <class T>
struct ContextBank {
  std::vector<Var<T>> features;
  std::vector<PatchCenter> centers;
  int r = 0;
  int context_height = 0;
  int context_width = 0;

  std::size_t size() const { return features.size(); }
};

/// Keys and values ready for querying. Immutable once built, so concurrent
/// ROI queries may share it.
template <class T>
struct AttentionKeys {
  Var<T> keys;    // (Nk, c)
  Var<T> values;  // (Nk, c)
  /// LR-space center of the patch each key pixel belongs to.
  std::vector<PatchCenter> key_centers;
  /// Patch index of each key pixel.
  std::vector<int> key_patch;
  int patches = 0;
  double diagonal = 1.0;
};

/// Attention weights summed over the key pixels of each patch:
/// per_head[h] is (queries, patches), rows summing to 1.
struct AttentionDiagnostics {
  int query_height = 0;
  int query_width = 0;
  std::vector<Tensor<double>> per_head;
  std::vector<PatchCenter> centers;
};

template <class T>
class Gcm {
 public:
  Gcm() = default;
  /// With cfg.gcm.share_extractor set, the extractor aliases the parameters
  /// of `shared` instead of owning its own.
  Gcm(const ModelConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng,
      const Backbone<T>* shared = nullptr);

  int factor() const { return factor_; }
  int heads() const { return heads_; }
  int channels() const { return channels_; }
  int r() const { return r_; }
  int n_max() const { return n_max_; }

  /// Applies the extractor to each sampled patch independently.
  ContextBank<T> extract_bank(const Var<T>& context) const;
  Var<T> extract_feature(const Var<T>& rgb_patch) const;

  /// Strided conv + bilinear down; spatial sides must be divisible by factor.
  Var<T> scale_down(const Var<T>& t) const;
  /// Transposed conv + bilinear up to (out_h, out_w) = factor x input.
  Var<T> scale_up(const Var<T>& t) const;

  AttentionKeys<T> prepare_keys(const ContextBank<T>& bank) const;

  /// z_down: (c, h, w). origin is the LR position of z_down's (0, 0) sample
  /// corner in context coordinates; query pixel (i, j) sits at
  /// origin + (i + 0.5, j + 0.5) * factor.
  Var<T> cross_attend(const Var<T>& z_down, const AttentionKeys<T>& keys, PatchCenter origin,
                      AttentionDiagnostics* diag = nullptr) const;

  /// scale_down -> cross_attend -> scale_up; output has z's shape.
  Var<T> forward(const Var<T>& z, const AttentionKeys<T>& keys, PatchCenter origin,
                 AttentionDiagnostics* diag = nullptr) const;

  const Var<T>& w_q() const { return wq_; }
  const Var<T>& w_k() const { return wk_; }
  const Var<T>& w_v() const { return wv_; }
  const Var<T>& alpha() const { return alpha_; }
  const Var<T>& beta() const { return beta_; }
  const Var<T>& gamma() const { return gamma_; }
  const Conv2d<T>& down_conv() const { return down_; }
  const Conv2d<T>& up_conv() const { return up_; }

 private:
  int factor_ = 2;
  int heads_ = 1;
  int channels_ = 0;
  int r_ = 1;
  int n_max_ = 1;
  Backbone<T> extractor_;
  Var<T> wq_, wk_, wv_;
  Var<T> alpha_, beta_, gamma_;
  Conv2d<T> down_;
  Conv2d<T> up_;  // weight (c_in, c_out, k, k)
};

/// Kernel size, stride and padding of the learned scalers for a factor.
struct ScalerGeometry {
  int kernel;
  int stride;
  int pad;
};
ScalerGeometry scaler_geometry(int factor);

}  // namespace clsr
