#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "clsr/autograd.hpp"
#include "clsr/config.hpp"
#include "clsr/image.hpp"
#include "clsr/nn.hpp"

namespace clsr::testing {

template <class T = float>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

inline Image random_image(int c, int h, int w, std::mt19937_64& rng) {
  return random_tensor<float>({c, h, w}, rng);
}

/// Overwrites every parameter with small random values so that gradients
/// reach every layer (zero-initialised convolutions would otherwise block them).
template <class T>
void randomize_params(ParamStore<T>& store, std::mt19937_64& rng, double amplitude = 0.3) {
  std::normal_distribution<double> n(0.0, amplitude);
  for (auto& v : store.vars()) {
    for (auto& x : v.mutable_value().storage()) x = static_cast<T>(n(rng));
  }
}

template <class T>
void zero_params(ParamStore<T>& store, const std::string& prefix) {
  const auto& names = store.ordered_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].rfind(prefix, 0) == 0) store.vars()[i].mutable_value().fill(T(0));
  }
}

/// Central difference of f with respect to element i of v.
inline double central_difference(Var<double>& v, std::size_t i, double h,
                                 const std::function<double()>& f) {
  auto& x = v.mutable_value()[i];
  const double saved = x;
  x = saved + h;
  const double fp = f();
  x = saved - h;
  const double fm = f();
  x = saved;
  return (fp - fm) / (2.0 * h);
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-7});
  return std::abs(a - b) / scale;
}

/// Small model used throughout: c = 4, c' = 1, one block per stage, x2.
inline ModelConfig toy_config() {
  ModelConfig m;
  m.backbone.channels = 4;
  m.backbone.blocks_per_stage = {1, 1, 1};
  m.backbone.scale = 2;
  m.gcm.r = 6;
  m.gcm.n_max = 16;
  m.gcm.heads = 2;
  m.gcm.factor = 2;
  m.pim.channel_divisor = 4;
  m.pad = 2;
  return m;
}

}  // namespace clsr::testing
