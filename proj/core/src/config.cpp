#include "clsr/config.hpp"

#include <cstdio>
#include <fstream>

#include "clsr/error.hpp"

namespace clsr {

using nlohmann::json;

void BackboneConfig::validate() const {
  if (channels < 1) throw ConfigError("backbone.channels must be >= 1");
  if (blocks_per_stage.empty()) throw ConfigError("backbone needs at least one stage");
  for (int b : blocks_per_stage) {
    if (b < 1) throw ConfigError("every backbone stage needs at least one block");
  }
  if (scale < 1 || (scale & (scale - 1)) != 0) {
    throw ConfigError("backbone.scale must be a power of two, got " + std::to_string(scale));
  }
  if (in_channels != 3) throw ConfigError("backbone.in_channels must be 3");
}

int PimConfig::channels(int base_channels) const {
  if (channel_divisor < 1) throw ConfigError("pim.channel_divisor must be >= 1");
  return std::max(1, base_channels / channel_divisor);
}

void ModelConfig::validate() const {
  backbone.validate();
  if (pad < 0) throw ConfigError("pad must be >= 0");
  if (gcm.enabled) {
    if (gcm.r < 1) throw ConfigError("gcm.r must be >= 1");
    if (gcm.n_max < 1) throw ConfigError("gcm.n_max must be >= 1");
    if (gcm.heads < 1 || backbone.channels % gcm.heads) {
      throw ConfigError("backbone.channels must be divisible by gcm.heads");
    }
    if (gcm.factor < 1 || gcm.r % gcm.factor) throw ConfigError("gcm.r must be divisible by gcm.factor");
    const int fs = gcm.resolved_fuse_stage(backbone.stages());
    if (fs < 0 || fs >= backbone.stages()) throw ConfigError("gcm.fuse_stage out of range");
  }
  if (pim.enabled && pim.channels(backbone.channels) >= backbone.channels) {
    throw ConfigError("PIM channels must be fewer than backbone channels");
  }
}

void TrainConfig::validate() const {
  if (roi_patch < 1 || context_patch < roi_patch || (context_patch - roi_patch) % 2) {
    throw ConfigError("train.roi_patch + 2*margin must equal train.context_patch");
  }
  if (iters < 0 || batch_size < 1) throw ConfigError("train.iters/batch_size invalid");
  if (phase != "clsr" && phase != "backbone") throw ConfigError("train.phase must be clsr or backbone");
}

namespace {

std::string lambda_name(LambdaShape s) {
  switch (s) {
    case LambdaShape::Linear: return "linear";
    case LambdaShape::Cosine: return "cosine";
    case LambdaShape::Step: return "step";
  }
  return "linear";
}

LambdaShape lambda_from(const std::string& s) {
  if (s == "linear") return LambdaShape::Linear;
  if (s == "cosine") return LambdaShape::Cosine;
  if (s == "step") return LambdaShape::Step;
  throw ConfigError("unknown lambda schedule " + s);
}

template <class V>
void read(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

json to_json(const ModelConfig& m) {
  return {
      {"core", {{"pad", m.pad}}},
      {"backbone",
       {{"channels", m.backbone.channels},
        {"blocks_per_stage", m.backbone.blocks_per_stage},
        {"scale", m.backbone.scale},
        {"in_channels", m.backbone.in_channels},
        {"global_residual", m.backbone.global_residual}}},
      {"gcm",
       {{"enabled", m.gcm.enabled},
        {"r", m.gcm.r},
        {"n_max", m.gcm.n_max},
        {"heads", m.gcm.heads},
        {"factor", m.gcm.factor},
        {"fuse_stage", m.gcm.fuse_stage},
        {"gamma_init", m.gcm.gamma_init},
        {"share_extractor", m.gcm.share_extractor}}},
      {"pim", {{"enabled", m.pim.enabled}, {"channel_divisor", m.pim.channel_divisor}}},
  };
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  if (j.contains("core")) read(j["core"], "pad", m.pad);
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    read(b, "channels", m.backbone.channels);
    read(b, "blocks_per_stage", m.backbone.blocks_per_stage);
    read(b, "scale", m.backbone.scale);
    read(b, "in_channels", m.backbone.in_channels);
    read(b, "global_residual", m.backbone.global_residual);
  }
  if (j.contains("gcm")) {
    const auto& g = j["gcm"];
    read(g, "enabled", m.gcm.enabled);
    read(g, "r", m.gcm.r);
    read(g, "n_max", m.gcm.n_max);
    read(g, "heads", m.gcm.heads);
    read(g, "factor", m.gcm.factor);
    read(g, "fuse_stage", m.gcm.fuse_stage);
    read(g, "gamma_init", m.gcm.gamma_init);
    read(g, "share_extractor", m.gcm.share_extractor);
  }
  if (j.contains("pim")) {
    read(j["pim"], "enabled", m.pim.enabled);
    read(j["pim"], "channel_divisor", m.pim.channel_divisor);
  }
  return m;
}

json to_json(const Config& c) {
  json j = to_json(c.model);
  j["core"]["seed"] = c.seed;
  const auto& t = c.train;
  j["train"] = {{"context_patch", t.context_patch},
                {"roi_patch", t.roi_patch},
                {"iters", t.iters},
                {"lr", t.lr},
                {"lambda_start", t.lambda_start},
                {"lambda_schedule", lambda_name(t.lambda_shape)},
                {"batch_size", t.batch_size},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"checkpoint_every", t.checkpoint_every},
                {"val_every", t.val_every},
                {"val_rois", t.val_rois},
                {"phase", t.phase},
                {"init_from", t.init_from}};
  j["eval"] = {{"roi", c.eval.roi}, {"pad", c.eval.pad}, {"methods", c.eval.methods}};
  return j;
}

Config config_from_json(const json& j) {
  Config c;
  c.model = model_from_json(j);
  if (j.contains("core")) read(j["core"], "seed", c.seed);
  if (j.contains("train")) {
    const auto& t = j["train"];
    read(t, "context_patch", c.train.context_patch);
    read(t, "roi_patch", c.train.roi_patch);
    read(t, "iters", c.train.iters);
    read(t, "lr", c.train.lr);
    read(t, "lambda_start", c.train.lambda_start);
    if (t.contains("lambda_schedule")) c.train.lambda_shape = lambda_from(t["lambda_schedule"]);
    read(t, "batch_size", c.train.batch_size);
    read(t, "beta1", c.train.beta1);
    read(t, "beta2", c.train.beta2);
    read(t, "eps", c.train.eps);
    read(t, "checkpoint_every", c.train.checkpoint_every);
    read(t, "val_every", c.train.val_every);
    read(t, "val_rois", c.train.val_rois);
    read(t, "phase", c.train.phase);
    read(t, "init_from", c.train.init_from);
  }
  if (j.contains("eval")) {
    read(j["eval"], "roi", c.eval.roi);
    read(j["eval"], "pad", c.eval.pad);
    read(j["eval"], "methods", c.eval.methods);
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  try {
    return config_from_json(json::parse(f));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write config " + path.string());
  f << to_json(*this).dump(2) << "\n";
}

std::string json_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace clsr
