#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "clsr/autograd.hpp"
#include "clsr/ops.hpp"

namespace clsr {

/// Deterministic generator for one named sub-stream of a run seed, so that
/// enabling or disabling a module leaves every other stream untouched.
std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream);

/// Named, ordered collection of trainable tensors.
template <class T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init);
  const Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::string> names() const;
  std::vector<Var<T>>& vars() { return vars_; }
  const std::vector<Var<T>>& vars() const { return vars_; }
  const std::vector<std::string>& ordered_names() const { return names_; }
  std::size_t count() const;

  void zero_grad();
  void set_requires_grad(bool on);

  /// Copies values by name; every name in this store must be present.
  template <class U>
  void load(const std::map<std::string, Tensor<U>>& tensors, bool allow_missing = false);
  std::map<std::string, Tensor<float>> export_float() const;

 private:
  std::vector<std::string> names_;
  std::vector<Var<T>> vars_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform(-b, b) with b = sqrt(6 / fan_in).
template <class T>
Tensor<T> kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng);

template <class T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;
  int stride = 1;
  int pad = 1;

  enum class Init { Kaiming, Zero };
  static Conv2d create(ParamStore<T>& store, const std::string& name, int cin, int cout, int k,
                       int stride, int pad, std::mt19937_64& rng, Init init = Init::Kaiming);

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
  int in_channels() const { return weight.shape()[1]; }
  int out_channels() const { return weight.shape()[0]; }
  int kernel() const { return weight.shape()[2]; }
};

/// conv3x3 -> ReLU -> conv3x3 with an additive skip.
template <class T>
struct ResBlock {
  Conv2d<T> conv1;
  Conv2d<T> conv2;

  static ResBlock create(ParamStore<T>& store, const std::string& name, int channels,
                         std::mt19937_64& rng);
  Var<T> operator()(const Var<T>& x) const { return ops::add(x, conv2(ops::relu(conv1(x)))); }
};

}  // namespace clsr
