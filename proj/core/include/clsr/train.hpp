#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clsr/dataset.hpp"
#include "clsr/model.hpp"

namespace clsr {

struct LossParts {
  double roi = 0;
  double ctx = 0;
  double total = 0;
};

/// mean|pred - y| + lambda * mean|pred_ctx - y_ctx|. The context term is
/// skipped when pred_ctx is undefined or lambda is zero.
template <class T>
Var<T> clsr_loss(const Var<T>& pred, const Tensor<T>& y, const Var<T>& pred_ctx, const Tensor<T>* y_ctx,
                 double lambda, LossParts* parts = nullptr);

/// Weight of the context term at `iter` of `total`; lambda0 at 0, 0 at total.
double lambda_schedule(int iter, int total, double lambda0, LambdaShape shape = LambdaShape::Linear);

/// lr0 * (1 + cos(pi * iter / total)) / 2.
double cosine_lr(int iter, int total, double lr0);

/// Adam with bias correction. Parameters that received no gradient in a
/// step are left untouched.
class Adam {
 public:
  Adam(ParamStore<float>& store, double beta1, double beta2, double eps);

  void step(double lr);
  long steps() const { return t_; }

  std::map<std::string, Tensor<float>> state() const;
  void load_state(const std::map<std::string, Tensor<float>>& tensors, long steps);

 private:
  ParamStore<float>* store_;
  double b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Tensor<float>> m_, v_;
};

/// Root-mean-square gradient of every parameter, by name.
std::map<std::string, double> grad_norms(const ParamStore<float>& store);

/// Fixed held-out ROIs for validation.
struct ValidationRoi {
  std::size_t image = 0;
  RoiBox box;
};
std::vector<ValidationRoi> make_validation_rois(const Dataset& data, int count, int roi,
                                                std::uint64_t seed);

double validation_psnr(const ClsrModel<float>& model, const Dataset& data,
                       const std::vector<ValidationRoi>& rois);

struct TrainOptions {
  std::filesystem::path out_dir;
  /// Checkpoint stem (without extension) to resume from.
  std::optional<std::filesystem::path> resume;
  /// Called with every metrics record.
  std::function<void(const nlohmann::json&)> on_log;
};

struct TrainResult {
  std::filesystem::path final_weights;
  int iters = 0;
  double final_val_psnr = 0;
};

/// Runs cfg.iters optimisation steps with batches of cfg.batch_size samples.
/// Writes metrics.jsonl, periodic checkpoints ckpt_NNNNNN.{clsrw,opt} and
/// final.clsrw into out_dir. Throws NumericError on a non-finite loss after
/// dumping per-parameter gradient norms to nan_dump.json.
TrainResult train_loop(ClsrModel<float>& model, const Dataset& train, const Dataset* val,
                       const TrainConfig& cfg, std::uint64_t seed, const TrainOptions& opt);

}  // namespace clsr
