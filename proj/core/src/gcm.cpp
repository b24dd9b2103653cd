#include "clsr/gcm.hpp"

#include <cmath>

#include "clsr/error.hpp"

namespace clsr {

std::vector<GridPatch> partition_grid(int height, int width, int r, int n_max) {
  if (r < 1 || n_max < 1) throw ConfigError("partition needs r >= 1 and n_max >= 1");
  if (height < r || width < r) {
    throw ShapeError("context " + std::to_string(height) + "x" + std::to_string(width) +
                     " is smaller than patch side " + std::to_string(r));
  }
  const int gh = height / r, gw = width / r;
  int k = 1;
  auto count = [&](int kk) {
    return static_cast<long>((gh + kk - 1) / kk) * static_cast<long>((gw + kk - 1) / kk);
  };
  while (count(k) > n_max) ++k;
  std::vector<GridPatch> out;
  for (int gi = 0; gi < gh; gi += k) {
    for (int gj = 0; gj < gw; gj += k) {
      GridPatch p;
      p.box = {gi * r, gj * r, r, r};
      p.center = {gi * r + r / 2.0, gj * r + r / 2.0};
      out.push_back(p);
    }
  }
  return out;
}

ScalerGeometry scaler_geometry(int factor) {
  if (factor < 1) throw ConfigError("scaler factor must be >= 1");
  if (factor % 2 == 0) return {2 * factor, factor, factor / 2};
  return {factor, factor, 0};
}

template <class T>
Gcm<T>::Gcm(const ModelConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng,
            const Backbone<T>* shared)
    : factor_(cfg.gcm.factor),
      heads_(cfg.gcm.heads),
      channels_(cfg.backbone.channels),
      r_(cfg.gcm.r),
      n_max_(cfg.gcm.n_max) {
  const int c = channels_;
  if (cfg.gcm.share_extractor) {
    if (!shared) throw ConfigError("gcm.share_extractor requires a backbone to share");
    extractor_ = *shared;
  } else {
    BackboneConfig ecfg = cfg.backbone;
    ecfg.blocks_per_stage = {cfg.backbone.blocks_per_stage.front()};
    extractor_ = Backbone<T>(ecfg, c, store, "gcm.extractor", rng, /*with_head=*/false);
  }

  const double bound = 1.0 / std::sqrt(static_cast<double>(c));
  std::uniform_real_distribution<double> u(-bound, bound);
  auto projection = [&](const std::string& name) {
    Tensor<T> w({c, c});
    for (auto& v : w.storage()) v = static_cast<T>(u(rng));
    return store.add(name, std::move(w));
  };
  wq_ = projection("gcm.attn.w_q");
  wk_ = projection("gcm.attn.w_k");
  wv_ = projection("gcm.attn.w_v");
  alpha_ = store.add("gcm.attn.alpha", Tensor<T>({heads_}, T(0)));
  beta_ = store.add("gcm.attn.beta", Tensor<T>({heads_}, T(1)));
  gamma_ = store.add("gcm.attn.gamma", Tensor<T>({1}, static_cast<T>(cfg.gcm.gamma_init)));

  const auto g = scaler_geometry(factor_);
  down_ = Conv2d<T>::create(store, "gcm.scale_down", c, c, g.kernel, g.stride, g.pad, rng,
                            Conv2d<T>::Init::Zero);
  up_ = Conv2d<T>::create(store, "gcm.scale_up", c, c, g.kernel, g.stride, g.pad, rng,
                          Conv2d<T>::Init::Zero);
}

template <class T>
Var<T> Gcm<T>::extract_feature(const Var<T>& rgb_patch) const {
  return extractor_.extract_first_stage(rgb_patch);
}

template <class T>
ContextBank<T> Gcm<T>::extract_bank(const Var<T>& context) const {
  const int h = context.shape()[1], w = context.shape()[2];
  ContextBank<T> bank;
  bank.r = r_;
  bank.context_height = h;
  bank.context_width = w;
  for (const auto& p : partition_grid(h, w, r_, n_max_)) {
    bank.features.push_back(extract_feature(ops::reflect_window(context, p.box)));
    bank.centers.push_back(p.center);
  }
  return bank;
}

template <class T>
Var<T> Gcm<T>::scale_down(const Var<T>& t) const {
  const int h = t.shape()[1], w = t.shape()[2];
  if (h % factor_ || w % factor_) {
    throw ShapeError("scale_down: " + shape_str(t.shape()) + " not divisible by factor " +
                     std::to_string(factor_));
  }
  if (t.shape()[0] != channels_) throw ShapeError("scale_down: channel mismatch");
  return ops::add(down_(t), ops::resize_bilinear(t, h / factor_, w / factor_));
}

template <class T>
Var<T> Gcm<T>::scale_up(const Var<T>& t) const {
  const int h = t.shape()[1], w = t.shape()[2];
  if (t.shape()[0] != channels_) throw ShapeError("scale_up: channel mismatch");
  return ops::add(ops::conv_transpose2d(t, up_.weight, up_.bias, up_.stride, up_.pad),
                  ops::resize_bilinear(t, h * factor_, w * factor_));
}

template <class T>
AttentionKeys<T> Gcm<T>::prepare_keys(const ContextBank<T>& bank) const {
  if (bank.size() == 0) throw ShapeError("empty context bank");
  AttentionKeys<T> keys;
  std::vector<Var<T>> tokens;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    Var<T> d = scale_down(bank.features[i]);
    const int n = d.shape()[1] * d.shape()[2];
    for (int j = 0; j < n; ++j) {
      keys.key_centers.push_back(bank.centers[i]);
      keys.key_patch.push_back(static_cast<int>(i));
    }
    tokens.push_back(ops::to_tokens(d));
  }
  Var<T> all = tokens.size() == 1 ? tokens.front() : ops::concat_rows(tokens);
  keys.keys = ops::matmul_nt(all, wk_);
  keys.values = ops::matmul_nt(all, wv_);
  keys.patches = static_cast<int>(bank.size());
  keys.diagonal = std::hypot(static_cast<double>(bank.context_height),
                             static_cast<double>(bank.context_width));
  return keys;
}

template <class T>
Var<T> Gcm<T>::cross_attend(const Var<T>& z_down, const AttentionKeys<T>& keys, PatchCenter origin,
                            AttentionDiagnostics* diag) const {
  if (z_down.shape().size() != 3 || z_down.shape()[0] != channels_) {
    throw ShapeError("cross_attend: expected " + std::to_string(channels_) + " channels, got " +
                     shape_str(z_down.shape()));
  }
  if (!keys.keys.defined() || keys.keys.shape()[0] == 0) throw ShapeError("cross_attend: empty bank");
  const int hd = z_down.shape()[1], wd = z_down.shape()[2];
  const int nq = hd * wd, nk = keys.keys.shape()[0];
  const int ch = channels_ / heads_;

  Tensor<T> dist({nq, nk});
  for (int i = 0; i < hd; ++i) {
    for (int j = 0; j < wd; ++j) {
      const double qr = origin.row + (i + 0.5) * factor_;
      const double qc = origin.col + (j + 0.5) * factor_;
      T* row = dist.data() + static_cast<std::size_t>(i * wd + j) * nk;
      for (int k = 0; k < nk; ++k) {
        const auto& kc = keys.key_centers[static_cast<std::size_t>(k)];
        row[k] = static_cast<T>(std::hypot(qr - kc.row, qc - kc.col) / keys.diagonal);
      }
    }
  }

  if (diag) {
    diag->query_height = hd;
    diag->query_width = wd;
    diag->per_head.clear();
    diag->centers.clear();
    std::vector<bool> seen(static_cast<std::size_t>(keys.patches), false);
    diag->centers.resize(static_cast<std::size_t>(keys.patches));
    for (int k = 0; k < nk; ++k) {
      const auto p = static_cast<std::size_t>(keys.key_patch[static_cast<std::size_t>(k)]);
      if (!seen[p]) diag->centers[p] = keys.key_centers[static_cast<std::size_t>(k)];
      seen[p] = true;
    }
  }

  const Var<T> q = ops::matmul_nt(ops::to_tokens(z_down), wq_);
  const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(ch)));
  std::vector<Var<T>> outs;
  for (int h = 0; h < heads_; ++h) {
    const int b = h * ch, e = b + ch;
    Var<T> qh = heads_ == 1 ? q : ops::slice_cols(q, b, e);
    Var<T> kh = heads_ == 1 ? keys.keys : ops::slice_cols(keys.keys, b, e);
    Var<T> vh = heads_ == 1 ? keys.values : ops::slice_cols(keys.values, b, e);
    Var<T> logits = ops::attention_logits(ops::matmul_nt(qh, kh), alpha_, beta_, gamma_, h, dist,
                                          inv_scale);
    Var<T> a = ops::softmax_rows(logits);
    if (diag) {
      Tensor<double> agg({nq, keys.patches});
      for (int i = 0; i < nq; ++i) {
        for (int k = 0; k < nk; ++k) {
          agg.data()[static_cast<std::size_t>(i) * keys.patches + keys.key_patch[static_cast<std::size_t>(k)]] +=
              a.value()[static_cast<std::size_t>(i) * nk + k];
        }
      }
      diag->per_head.push_back(std::move(agg));
    }
    outs.push_back(ops::matmul(a, vh));
  }
  Var<T> g = heads_ == 1 ? outs.front() : ops::concat_cols(outs);
  return ops::from_tokens(g, hd, wd);
}

template <class T>
Var<T> Gcm<T>::forward(const Var<T>& z, const AttentionKeys<T>& keys, PatchCenter origin,
                       AttentionDiagnostics* diag) const {
  return scale_up(cross_attend(scale_down(z), keys, origin, diag));
}

template class Gcm<float>;
template class Gcm<double>;
template struct ContextBank<float>;
template struct ContextBank<double>;

}  // namespace clsr
