#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace clsr {

struct BackboneConfig {
  int channels = 32;
  std::vector<int> blocks_per_stage{2, 2, 2};
  int scale = 4;
  int in_channels = 3;
  /// Adds the bilinear upsample of the input patch to the head output.
  bool global_residual = true;

  int stages() const { return static_cast<int>(blocks_per_stage.size()); }
  void validate() const;
};

struct GcmConfig {
  bool enabled = true;
  int r = 6;
  int n_max = 256;
  int heads = 2;
  int factor = 2;
  /// Stage after which the GCM output is added; -1 selects the middle stage.
  int fuse_stage = -1;
  double gamma_init = 1.0;
  /// Reuse the backbone's head and first stage as the extractor G.
  bool share_extractor = false;

  int resolved_fuse_stage(int stages) const { return fuse_stage >= 0 ? fuse_stage : (stages - 1) / 2; }
};

struct PimConfig {
  bool enabled = true;
  int channel_divisor = 10;

  /// c' = max(1, floor(c / divisor)).
  int channels(int base_channels) const;
};

struct ModelConfig {
  BackboneConfig backbone;
  GcmConfig gcm;
  PimConfig pim;
  /// LR pixels of real context added around the ROI before the base branch.
  int pad = 8;

  /// The padded patch is aligned to this multiple so GCM downsampling is exact.
  int alignment() const { return gcm.enabled ? gcm.factor : 1; }
  void validate() const;
};

enum class LambdaShape { Linear, Cosine, Step };

struct TrainConfig {
  int context_patch = 54;
  int roi_patch = 48;
  int iters = 5000;
  double lr = 1e-4;
  double lambda_start = 0.5;
  LambdaShape lambda_shape = LambdaShape::Linear;
  int batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int checkpoint_every = 1000;
  int val_every = 500;
  int val_rois = 16;
  /// "clsr" trains the full model; "backbone" trains the base branch alone
  /// on the pre-cropping task.
  std::string phase = "clsr";
  /// Optional checkpoint whose matching parameters initialise the model.
  std::string init_from;

  int margin() const { return (context_patch - roi_patch) / 2; }
  void validate() const;
};

struct EvalConfig {
  int roi = 24;
  int pad = 8;
  std::vector<std::string> methods{"pre", "post", "clsr"};
};

/// The sectioned configuration file: core / backbone / gcm / pim / train / eval.
struct Config {
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t seed = 0;

  static Config load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

nlohmann::json to_json(const ModelConfig& m);
ModelConfig model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Config& c);
Config config_from_json(const nlohmann::json& j);

/// Stable hex digest of a JSON value (FNV-1a over its compact dump).
std::string json_hash(const nlohmann::json& j);

}  // namespace clsr
