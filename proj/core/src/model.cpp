#include "clsr/model.hpp"

#include "clsr/error.hpp"
#include "clsr/flop_counter.hpp"
#include "clsr/weights_io.hpp"

namespace clsr {

template <class T>
ClsrModel<T>::ClsrModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  auto rng_b = make_rng(seed, "backbone");
  backbone_ = Backbone<T>(cfg_.backbone, cfg_.backbone.channels, store_, "backbone", rng_b);
  if (cfg_.gcm.enabled) {
    auto rng_g = make_rng(seed, "gcm");
    gcm_ = Gcm<T>(cfg_, store_, rng_g, &backbone_);
  }
  if (cfg_.pim.enabled) {
    auto rng_p = make_rng(seed, "pim");
    pim_ = Pim<T>(cfg_, store_, rng_p);
  }
}

template <class T>
ContextState<T> ClsrModel<T>::prepare_context(const Var<T>& context, bool with_pim_sr) const {
  if (context.shape().size() != 3 || context.shape()[0] != 3) {
    throw ShapeError("context must be 3 x H x W, got " + shape_str(context.shape()));
  }
  ContextState<T> ctx;
  ctx.image = context;
  if (cfg_.gcm.enabled) {
    FlopScope scope;
    ctx.keys = gcm_.prepare_keys(gcm_.extract_bank(context));
    ctx.flops.gcm = scope.flops();
  }
  if (cfg_.pim.enabled) {
    {
      FlopScope scope;
      ctx.pim = pim_.forward(context, false);
      ctx.flops.pim = scope.flops();
    }
    if (with_pim_sr) ctx.pim.sr_context = pim_.sr_head(ctx.pim, context);
  }
  return ctx;
}

template <class T>
Var<T> ClsrModel<T>::crop_output(const Var<T>& out, const RoiBox& outer, const RoiBox& box) const {
  const int s = cfg_.backbone.scale;
  return ops::reflect_window(out, RoiBox{(box.top - outer.top) * s, (box.left - outer.left) * s,
                                         box.height * s, box.width * s});
}

template <class T>
Var<T> ClsrModel<T>::forward_roi(const ContextState<T>& ctx, const RoiBox& box, int pad,
                                 RoiDiagnostics* diag) const {
  if (!box.fits(ctx.height(), ctx.width())) {
    throw BoundsError("ROI " + to_string(box) + " outside context " + std::to_string(ctx.height()) +
                      "x" + std::to_string(ctx.width()));
  }
  if (pad < 0) throw ConfigError("pad must be >= 0");
  FlopScope scope;
  const RoiBox outer = padded_window(box, pad, cfg_.alignment());
  const Var<T> patch = ops::reflect_window(ctx.image, outer);

  std::vector<typename Backbone<T>::Fuser> fusers;
  if (cfg_.pim.enabled) {
    if (ctx.pim.stage_features.size() != static_cast<std::size_t>(backbone_.stages())) {
      throw ConfigError("context state lacks PIM features");
    }
    fusers.push_back([&](int s, const Var<T>& z) {
      return crop_fuse(z, ctx.pim.stage_features[static_cast<std::size_t>(s)], outer);
    });
  }
  if (cfg_.gcm.enabled) {
    if (!ctx.keys.keys.defined()) throw ConfigError("context state lacks a GCM bank");
    const int fs = cfg_.gcm.resolved_fuse_stage(backbone_.stages());
    fusers.push_back([&, fs](int s, const Var<T>& z) {
      if (s != fs) return z;
      const PatchCenter origin{static_cast<double>(outer.top), static_cast<double>(outer.left)};
      return ops::add(z, gcm_.forward(z, ctx.keys, origin, diag ? &diag->attention : nullptr));
    });
  }
  Var<T> out = crop_output(backbone_.forward_with_fusion(patch, fusers), outer, box);
  if (diag) {
    diag->flops = ctx.flops;
    diag->flops.base = scope.flops();
    diag->outer = outer;
  }
  return out;
}

template <class T>
Var<T> ClsrModel<T>::pre_crop_forward(const Var<T>& context, const RoiBox& box, int pad) const {
  const int h = context.shape()[1], w = context.shape()[2];
  if (!box.fits(h, w)) throw BoundsError("ROI " + to_string(box) + " outside context");
  if (pad < 0) throw ConfigError("pad must be >= 0");
  const RoiBox outer = padded_window(box, pad, cfg_.alignment());
  return crop_output(backbone_.forward(ops::reflect_window(context, outer)), outer, box);
}

template <class T>
Var<T> ClsrModel<T>::post_crop_forward(const Tensor<T>& context, const RoiBox& box) const {
  if (!box.fits(context.height(), context.width())) {
    throw BoundsError("ROI " + to_string(box) + " outside context");
  }
  const RoiBox whole{0, 0, context.height(), context.width()};
  return crop_output(backbone_.forward(Var<T>::constant(context)), whole, box);
}

template <class T>
void ClsrModel<T>::save(const std::filesystem::path& path) const {
  WeightsFile f;
  f.tensors = store_.export_float();
  f.config = to_json(cfg_);
  save_weights(path, f);
}

template <class T>
ClsrModel<T> ClsrModel<T>::load(const std::filesystem::path& path) {
  WeightsFile f = load_weights(path);
  if (!f.config) throw ConfigError(path.string() + ": weights carry no model configuration");
  ClsrModel m(model_from_json(*f.config));
  m.store_.load(f.tensors);
  return m;
}

template <class T>
void ClsrModel<T>::load_parameters(const std::filesystem::path& path, bool allow_missing) {
  store_.load(load_weights(path).tensors, allow_missing);
}

template class ClsrModel<float>;
template class ClsrModel<double>;

Image restore_roi(const ClsrModel<float>& model, const ContextState<float>& ctx, const RoiBox& box,
                  int pad, RoiDiagnostics* diag) {
  return clamp01(model.forward_roi(ctx, box, pad, diag).value());
}

}  // namespace clsr
