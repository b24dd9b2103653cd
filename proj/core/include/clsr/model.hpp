#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "clsr/backbone.hpp"
#include "clsr/config.hpp"
#include "clsr/flops.hpp"
#include "clsr/gcm.hpp"
#include "clsr/pim.hpp"

namespace clsr {

/// Everything computed once per context and reused by every ROI query.
template <class T>
struct ContextState {
  Var<T> image;
  PimOutputs<T> pim;
  AttentionKeys<T> keys;
  /// Measured gcm and pim FLOPs; base stays zero here.
  FlopsBreakdown flops;

  int height() const { return image.shape()[1]; }
  int width() const { return image.shape()[2]; }
};

struct RoiDiagnostics {
  AttentionDiagnostics attention;
  /// base measured for this ROI; gcm and pim copied from the context.
  FlopsBreakdown flops;
  RoiBox outer;
};

template <class T>
class ClsrModel {
 public:
  explicit ClsrModel(const ModelConfig& cfg, std::uint64_t seed = 0);
  ClsrModel(ClsrModel&&) noexcept = default;
  ClsrModel& operator=(ClsrModel&&) noexcept = default;
  ClsrModel(const ClsrModel&) = delete;
  ClsrModel& operator=(const ClsrModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const Gcm<T>* gcm() const { return cfg_.gcm.enabled ? &gcm_ : nullptr; }
  const Pim<T>* pim() const { return cfg_.pim.enabled ? &pim_ : nullptr; }
  int scale() const { return cfg_.backbone.scale; }

  /// Toggles gradient recording for every parameter.
  void set_training(bool on) { store_.set_requires_grad(on); }

  ContextState<T> prepare_context(const Var<T>& context, bool with_pim_sr = false) const;
  ContextState<T> prepare_context(const Tensor<T>& context, bool with_pim_sr = false) const {
    return prepare_context(Var<T>::constant(context), with_pim_sr);
  }

  /// 3 x (s*h) x (s*w) restoration of `box`, unclamped.
  Var<T> forward_roi(const ContextState<T>& ctx, const RoiBox& box, int pad,
                     RoiDiagnostics* diag = nullptr) const;

  Var<T> clsr_forward(const Tensor<T>& context, const RoiBox& box, int pad,
                      RoiDiagnostics* diag = nullptr) const {
    return forward_roi(prepare_context(context), box, pad, diag);
  }

  /// Base branch alone on the padded ROI, same window geometry as clsr_forward.
  Var<T> pre_crop_forward(const Var<T>& context, const RoiBox& box, int pad) const;
  Var<T> pre_crop_forward(const Tensor<T>& context, const RoiBox& box, int pad) const {
    return pre_crop_forward(Var<T>::constant(context), box, pad);
  }

  /// Base branch on the whole context, then cropped.
  Var<T> post_crop_forward(const Tensor<T>& context, const RoiBox& box) const;

  void save(const std::filesystem::path& path) const;
  /// Builds the model from the configuration stored in the file.
  static ClsrModel load(const std::filesystem::path& path);
  /// Copies matching parameters from a file. With allow_missing, parameters
  /// absent from the file keep their current values.
  void load_parameters(const std::filesystem::path& path, bool allow_missing = false);

 private:
  Var<T> crop_output(const Var<T>& out, const RoiBox& outer, const RoiBox& box) const;

  ModelConfig cfg_;
  ParamStore<T> store_;
  Backbone<T> backbone_;
  Gcm<T> gcm_;
  Pim<T> pim_;
};

/// Clamped inference output of a float model.
Image restore_roi(const ClsrModel<float>& model, const ContextState<float>& ctx, const RoiBox& box,
                  int pad, RoiDiagnostics* diag = nullptr);

}  // namespace clsr
