#include "clsr/pim.hpp"

#include "clsr/error.hpp"

namespace clsr {

template <class T>
Pim<T>::Pim(const ModelConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng)
    : branch_(cfg.backbone, cfg.pim.channels(cfg.backbone.channels), store, "pim", rng) {}

template <class T>
PimOutputs<T> Pim<T>::forward(const Var<T>& context, bool with_sr) const {
  PimOutputs<T> out;
  Var<T> f = branch_.shallow_extract(context);
  for (int s = 0; s < branch_.stages(); ++s) {
    f = branch_.run_stage(f, s);
    out.stage_features.push_back(f);
  }
  if (with_sr) out.sr_context = sr_head(out, context);
  return out;
}

template <class T>
Var<T> Pim<T>::sr_head(const PimOutputs<T>& out, const Var<T>& context) const {
  if (out.stage_features.empty()) throw ShapeError("PIM outputs carry no stage features");
  return branch_.upsample_head(out.stage_features.back(), context);
}

template <class T>
Var<T> crop_fuse(const Var<T>& z, const Var<T>& p, const RoiBox& window) {
  if (window.height != z.shape()[1] || window.width != z.shape()[2]) {
    throw ShapeError("crop_fuse: window " + to_string(window) + " does not match feature " +
                     shape_str(z.shape()));
  }
  if (p.shape()[0] > z.shape()[0]) throw ShapeError("crop_fuse: PIM feature is wider than z");
  return ops::add_leading_channels(z, ops::reflect_window(p, window));
}

template class Pim<float>;
template class Pim<double>;
template Var<float> crop_fuse(const Var<float>&, const Var<float>&, const RoiBox&);
template Var<double> crop_fuse(const Var<double>&, const Var<double>&, const RoiBox&);

}  // namespace clsr
