#include "clsr/backbone.hpp"

namespace clsr {

template <class T>
Backbone<T>::Backbone(const BackboneConfig& cfg, int channels, ParamStore<T>& store,
                      const std::string& prefix, std::mt19937_64& rng, bool with_head)
    : channels_(channels),
      scale_(cfg.scale),
      global_residual_(cfg.global_residual),
      blocks_(cfg.blocks_per_stage),
      has_head_(with_head) {
  cfg.validate();
  if (channels < 1) throw ConfigError("branch channels must be >= 1");
  shallow_ = Conv2d<T>::create(store, prefix + ".shallow", cfg.in_channels, channels, 3, 1, 1, rng);
  stages_.resize(blocks_.size());
  for (std::size_t s = 0; s < blocks_.size(); ++s) {
    for (int b = 0; b < blocks_[s]; ++b) {
      stages_[s].push_back(ResBlock<T>::create(
          store, prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(b), channels, rng));
    }
  }
  if (with_head) {
    for (int f = cfg.scale, i = 0; f > 1; f /= 2, ++i) {
      up_.push_back(Conv2d<T>::create(store, prefix + ".up" + std::to_string(i), channels,
                                      4 * channels, 3, 1, 1, rng));
    }
    // Zero output conv: an untrained branch returns the bilinear residual.
    tail_ = Conv2d<T>::create(store, prefix + ".tail", channels, 3, 3, 1, 1, rng,
                              Conv2d<T>::Init::Zero);
  }
}

template <class T>
Var<T> Backbone<T>::shallow_extract(const Var<T>& rgb) const {
  if (rgb.shape().size() != 3 || rgb.shape()[0] != 3) {
    throw ShapeError("branch input must be 3-channel, got " + shape_str(rgb.shape()));
  }
  return shallow_(rgb);
}

template <class T>
Var<T> Backbone<T>::run_stage(const Var<T>& z, int stage) const {
  if (stage < 0 || stage >= stages()) throw BoundsError("stage index out of range");
  Var<T> h = z;
  for (const auto& block : stages_[static_cast<std::size_t>(stage)]) h = block(h);
  return h;
}

template <class T>
Var<T> Backbone<T>::upsample_head(const Var<T>& z, const Var<T>& rgb) const {
  if (!has_head_) throw ConfigError("branch was built without an upsampling head");
  Var<T> h = z;
  for (const auto& conv : up_) h = ops::pixel_shuffle(conv(h), 2);
  Var<T> out = tail_(h);
  if (global_residual_) {
    out = ops::add(out, ops::resize_bilinear(rgb, rgb.shape()[1] * scale_, rgb.shape()[2] * scale_));
  }
  return out;
}

template <class T>
Var<T> Backbone<T>::forward_with_fusion(const Var<T>& rgb, const std::vector<Fuser>& fusers) const {
  Var<T> z = shallow_extract(rgb);
  for (int s = 0; s < stages(); ++s) {
    z = run_stage(z, s);
    for (const auto& fuse : fusers) z = fuse(s, z);
  }
  return upsample_head(z, rgb);
}

template <class T>
std::vector<Conv2d<T>*> Backbone<T>::convs() {
  std::vector<Conv2d<T>*> out{&shallow_};
  for (auto& st : stages_)
    for (auto& b : st) {
      out.push_back(&b.conv1);
      out.push_back(&b.conv2);
    }
  for (auto& u : up_) out.push_back(&u);
  if (has_head_) out.push_back(&tail_);
  return out;
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace clsr
