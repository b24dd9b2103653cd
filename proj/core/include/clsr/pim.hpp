#pragma once

#include <random>
#include <vector>

#include "clsr/backbone.hpp"
#include "clsr/config.hpp"

namespace clsr {

/// Slim full-context branch outputs. stage_features[i] spans the whole
/// context; sr_context is only present when the head was requested.
template <class T>
struct PimOutputs {
  std::vector<Var<T>> stage_features;
  Var<T> sr_context;
  bool has_sr() const { return sr_context.defined(); }
};

template <class T>
class Pim {
 public:
  Pim() = default;
  Pim(const ModelConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng);

  int channels() const { return branch_.channels(); }
  int stages() const { return branch_.stages(); }

  /// Runs the slim stages on the whole context; the upsampling head runs
  /// only when `with_sr` is set.
  PimOutputs<T> forward(const Var<T>& context, bool with_sr) const;
  /// The head on an already computed final stage feature.
  Var<T> sr_head(const PimOutputs<T>& out, const Var<T>& context) const;

 private:
  Backbone<T> branch_;
};

/// z with crop(p, window) added to its first p.channels() channels. The
/// window may leave p's extent; outside samples are reflections.
template <class T>
Var<T> crop_fuse(const Var<T>& z, const Var<T>& p, const RoiBox& window);

}  // namespace clsr
