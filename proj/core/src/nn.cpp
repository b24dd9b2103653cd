#include "clsr/nn.hpp"

#include <cmath>

namespace clsr {

std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream) {
  // FNV-1a over the stream name, mixed with the seed.
  std::uint64_t h = 1469598103934665603ull;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

template <class T>
Var<T> ParamStore<T>::add(const std::string& name, Tensor<T> init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
  index_[name] = vars_.size();
  names_.push_back(name);
  vars_.push_back(Var<T>::parameter(std::move(init)));
  return vars_.back();
}

template <class T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return vars_[it->second];
}

template <class T>
std::vector<std::string> ParamStore<T>::names() const {
  return names_;
}

template <class T>
std::size_t ParamStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& v : vars_) n += v.value().size();
  return n;
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& v : vars_) v.zero_grad();
}

template <class T>
void ParamStore<T>::set_requires_grad(bool on) {
  for (auto& v : vars_) v.set_requires_grad(on);
}

template <class T>
template <class U>
void ParamStore<T>::load(const std::map<std::string, Tensor<U>>& tensors, bool allow_missing) {
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    auto it = tensors.find(names_[i]);
    if (it == tensors.end()) {
      if (allow_missing) continue;
      throw ConfigError("weights missing parameter " + names_[i]);
    }
    if (it->second.shape() != vars_[i].shape()) {
      throw ShapeError("parameter " + names_[i] + " has shape " + shape_str(it->second.shape()) +
                       ", expected " + shape_str(vars_[i].shape()));
    }
    vars_[i].mutable_value() = it->second.template cast<T>();
  }
}

template <class T>
std::map<std::string, Tensor<float>> ParamStore<T>::export_float() const {
  std::map<std::string, Tensor<float>> out;
  for (std::size_t i = 0; i < vars_.size(); ++i) out[names_[i]] = vars_[i].value().template cast<float>();
  return out;
}

template <class T>
Tensor<T> kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / std::max(1, fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
Conv2d<T> Conv2d<T>::create(ParamStore<T>& store, const std::string& name, int cin, int cout, int k,
                            int stride, int pad, std::mt19937_64& rng, Init init) {
  Conv2d c;
  c.stride = stride;
  c.pad = pad;
  Shape ws{cout, cin, k, k};
  c.weight = store.add(name + ".weight", init == Init::Zero ? Tensor<T>(ws)
                                                            : kaiming_uniform<T>(ws, cin * k * k, rng));
  c.bias = store.add(name + ".bias", Tensor<T>({cout}));
  return c;
}

template <class T>
ResBlock<T> ResBlock<T>::create(ParamStore<T>& store, const std::string& name, int channels,
                                std::mt19937_64& rng) {
  ResBlock b;
  b.conv1 = Conv2d<T>::create(store, name + ".conv1", channels, channels, 3, 1, 1, rng);
  b.conv2 = Conv2d<T>::create(store, name + ".conv2", channels, channels, 3, 1, 1, rng);
  return b;
}

template class ParamStore<float>;
template class ParamStore<double>;
template void ParamStore<float>::load(const std::map<std::string, Tensor<float>>&, bool);
template void ParamStore<double>::load(const std::map<std::string, Tensor<float>>&, bool);
template void ParamStore<double>::load(const std::map<std::string, Tensor<double>>&, bool);
template Tensor<float> kaiming_uniform(Shape, int, std::mt19937_64&);
template Tensor<double> kaiming_uniform(Shape, int, std::mt19937_64&);
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct ResBlock<float>;
template struct ResBlock<double>;

}  // namespace clsr
