#include "clsr/train.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "clsr/error.hpp"
#include "clsr/metrics.hpp"
#include "clsr/weights_io.hpp"

namespace clsr {

using nlohmann::json;
namespace fs = std::filesystem;

template <class T>
Var<T> clsr_loss(const Var<T>& pred, const Tensor<T>& y, const Var<T>& pred_ctx, const Tensor<T>* y_ctx,
                 double lambda, LossParts* parts) {
  Var<T> loss = ops::l1_loss(pred, y);
  LossParts p;
  p.roi = loss.value()[0];
  if (lambda != 0.0 && pred_ctx.defined()) {
    if (!y_ctx) throw ShapeError("context term needs a context target");
    Var<T> ctx = ops::l1_loss(pred_ctx, *y_ctx);
    p.ctx = ctx.value()[0];
    loss = ops::add(loss, ops::scale(ctx, static_cast<T>(lambda)));
  }
  p.total = loss.value()[0];
  if (parts) *parts = p;
  return loss;
}

template Var<float> clsr_loss(const Var<float>&, const Tensor<float>&, const Var<float>&,
                              const Tensor<float>*, double, LossParts*);
template Var<double> clsr_loss(const Var<double>&, const Tensor<double>&, const Var<double>&,
                               const Tensor<double>*, double, LossParts*);

double lambda_schedule(int iter, int total, double lambda0, LambdaShape shape) {
  if (iter < 0 || (total > 0 && iter > total)) throw ConfigError("lambda_schedule: iter out of range");
  const double t = total > 0 ? static_cast<double>(iter) / total : 1.0;
  switch (shape) {
    case LambdaShape::Linear: return lambda0 * (1.0 - t);
    case LambdaShape::Cosine: return t >= 1.0 ? 0.0 : lambda0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    case LambdaShape::Step: return t < 0.5 ? lambda0 : 0.0;
  }
  return 0.0;
}

double cosine_lr(int iter, int total, double lr0) {
  if (total <= 0) return lr0;
  const double t = std::clamp(static_cast<double>(iter) / total, 0.0, 1.0);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

Adam::Adam(ParamStore<float>& store, double beta1, double beta2, double eps)
    : store_(&store), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& v : store.vars()) {
    m_.emplace_back(v.shape());
    v_.emplace_back(v.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  auto& vars = store_->vars();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (!vars[i].has_grad()) continue;
    const auto& g = vars[i].grad();
    auto& w = vars[i].mutable_value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<float>(b1_ * m[k] + (1.0 - b1_) * gk);
      v[k] = static_cast<float>(b2_ * v[k] + (1.0 - b2_) * gk * gk);
      const double mh = m[k] / c1, vh = v[k] / c2;
      w[k] = static_cast<float>(w[k] - lr * mh / (std::sqrt(vh) + eps_));
    }
  }
}

std::map<std::string, Tensor<float>> Adam::state() const {
  std::map<std::string, Tensor<float>> out;
  const auto& names = store_->ordered_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    out["m." + names[i]] = m_[i];
    out["v." + names[i]] = v_[i];
  }
  return out;
}

void Adam::load_state(const std::map<std::string, Tensor<float>>& tensors, long steps) {
  const auto& names = store_->ordered_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto mi = tensors.find("m." + names[i]);
    auto vi = tensors.find("v." + names[i]);
    if (mi == tensors.end() || vi == tensors.end()) throw ConfigError("optimizer state lacks " + names[i]);
    if (mi->second.shape() != m_[i].shape() || vi->second.shape() != v_[i].shape()) {
      throw ShapeError("optimizer state shape mismatch for " + names[i]);
    }
    m_[i] = mi->second;
    v_[i] = vi->second;
  }
  t_ = steps;
}

std::map<std::string, double> grad_norms(const ParamStore<float>& store) {
  std::map<std::string, double> out;
  const auto& names = store.ordered_names();
  const auto& vars = store.vars();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    double acc = 0.0;
    if (vars[i].has_grad()) {
      for (float g : vars[i].grad().values()) acc += static_cast<double>(g) * g;
      acc = std::sqrt(acc / static_cast<double>(vars[i].grad().size()));
    }
    out[names[i]] = acc;
  }
  return out;
}

std::vector<ValidationRoi> make_validation_rois(const Dataset& data, int count, int roi,
                                                std::uint64_t seed) {
  std::vector<ValidationRoi> out;
  if (data.size() == 0 || count <= 0) return out;
  auto rng = make_rng(seed, "validation");
  for (int i = 0; i < count; ++i) {
    ValidationRoi v;
    v.image = static_cast<std::size_t>(i) % data.size();
    const Image& lr = data.pairs[v.image].lr;
    if (lr.height() < roi || lr.width() < roi) throw ShapeError("validation image smaller than ROI");
    v.box = {static_cast<int>(rng() % static_cast<std::uint64_t>(lr.height() - roi + 1)),
             static_cast<int>(rng() % static_cast<std::uint64_t>(lr.width() - roi + 1)), roi, roi};
    out.push_back(v);
  }
  return out;
}

double validation_psnr(const ClsrModel<float>& model, const Dataset& data,
                       const std::vector<ValidationRoi>& rois) {
  if (rois.empty()) return 0.0;
  double acc = 0.0;
  std::size_t cached = static_cast<std::size_t>(-1);
  ContextState<float> ctx;
  for (const auto& r : rois) {
    if (r.image != cached) {
      ctx = model.prepare_context(data.pairs[r.image].lr);
      cached = r.image;
    }
    const Image sr = restore_roi(model, ctx, r.box, model.config().pad);
    acc += psnr(sr, crop_hr(data.pairs[r.image].hr, r.box, model.scale()));
  }
  return acc / static_cast<double>(rois.size());
}

namespace {

std::string ckpt_stem(int iter) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06d", iter);
  return buf;
}

void save_checkpoint(const fs::path& stem, const ClsrModel<float>& model, const Adam& adam, int iter,
                     const std::mt19937_64& rng) {
  model.save(stem.string() + ".clsrw");
  std::ostringstream rs;
  rs << rng;
  WeightsFile opt;
  opt.tensors = adam.state();
  opt.config = json{{"iter", iter}, {"adam_steps", adam.steps()}, {"rng", rs.str()}};
  save_weights(stem.string() + ".opt", opt);
}

}  // namespace

TrainResult train_loop(ClsrModel<float>& model, const Dataset& train, const Dataset* val,
                       const TrainConfig& cfg, std::uint64_t seed, const TrainOptions& opt) {
  cfg.validate();
  const int s = model.scale();
  const int pad = model.config().pad;
  fs::create_directories(opt.out_dir);
  Adam adam(model.params(), cfg.beta1, cfg.beta2, cfg.eps);
  auto data_rng = make_rng(seed, "data");
  int start = 0;

  if (opt.resume) {
    model.load_parameters(opt.resume->string() + ".clsrw");
    WeightsFile st = load_weights(opt.resume->string() + ".opt");
    if (!st.config) throw ConfigError("optimizer checkpoint lacks metadata");
    start = st.config->at("iter").get<int>();
    adam.load_state(st.tensors, st.config->at("adam_steps").get<long>());
    std::istringstream rs(st.config->at("rng").get<std::string>());
    rs >> data_rng;
  }

  std::vector<ValidationRoi> val_rois;
  if (val && val->size() > 0) val_rois = make_validation_rois(*val, cfg.val_rois, cfg.roi_patch, seed);

  std::ofstream log(opt.out_dir / "metrics.jsonl", opt.resume ? std::ios::app : std::ios::trunc);
  TrainResult result;
  const double inv_batch = 1.0 / cfg.batch_size;

  for (int iter = start; iter < cfg.iters; ++iter) {
    const double lambda = lambda_schedule(iter, cfg.iters, cfg.lambda_start, cfg.lambda_shape);
    const double lr = cosine_lr(iter, cfg.iters, cfg.lr);
    model.set_training(true);
    model.params().zero_grad();
    LossParts mean;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const TrainSample sample = sample_training_pair(train, cfg, s, data_rng);
      const bool with_ctx = model.pim() != nullptr && lambda > 0.0;
      const auto ctx = model.prepare_context(sample.context, with_ctx);
      const auto pred = model.forward_roi(ctx, sample.box, pad);
      LossParts parts;
      const auto loss = clsr_loss(pred, sample.hr_roi, ctx.pim.sr_context, &sample.hr_context, lambda, &parts);
      if (!std::isfinite(parts.total)) {
        backward(loss);
        json dump{{"iter", iter}, {"loss_roi", parts.roi}, {"loss_ctx", parts.ctx},
                  {"grad_rms", grad_norms(model.params())}};
        std::ofstream(opt.out_dir / "nan_dump.json") << dump.dump(2) << "\n";
        throw NumericError("non-finite loss at iter " + std::to_string(iter) + "; gradient norms in " +
                           (opt.out_dir / "nan_dump.json").string());
      }
      backward(ops::scale(loss, static_cast<float>(inv_batch)));
      mean.roi += parts.roi * inv_batch;
      mean.ctx += parts.ctx * inv_batch;
    }
    adam.step(lr);

    const int done = iter + 1;
    json rec{{"iter", done}, {"loss_roi", mean.roi}, {"loss_ctx", mean.ctx},
             {"lambda", lambda}, {"lr", lr}, {"val_psnr", nullptr}};
    const bool last = done == cfg.iters;
    if (!val_rois.empty() && ((cfg.val_every > 0 && done % cfg.val_every == 0) || last)) {
      model.set_training(false);
      result.final_val_psnr = validation_psnr(model, *val, val_rois);
      rec["val_psnr"] = result.final_val_psnr;
    }
    log << rec.dump() << "\n";
    log.flush();
    if (opt.on_log) opt.on_log(rec);
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && !last) {
      save_checkpoint(opt.out_dir / ckpt_stem(done), model, adam, done, data_rng);
    }
  }
  model.set_training(false);
  model.params().zero_grad();
  result.iters = cfg.iters;
  result.final_weights = opt.out_dir / "final.clsrw";
  model.save(result.final_weights);
  return result;
}

}  // namespace clsr
