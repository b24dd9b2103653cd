#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clsr/dataset.hpp"
#include "clsr/model.hpp"

namespace clsr {

/// Non-overlapping roi x roi grid covering an H x W image exactly.
std::vector<RoiBox> tile_image(int height, int width, int roi);

/// Top-left anchored crop of an LR/HR pair to a multiple of `roi` LR pixels.
SamplePair crop_to_multiple(const SamplePair& pair, int roi);

struct ReportRow {
  std::string method;
  std::string dataset;
  int roi_size = 0;
  int pad = 0;
  double psnr_mean = 0;
  double ssim_mean = 0;
  /// Mean FLOPs to restore one ROI.
  double flops_total = 0;
  /// Sweep or ablation setting the row belongs to, e.g. "ratio=6".
  std::string variant;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  nlohmann::json metadata = nlohmann::json::object();

  std::string to_csv() const;
  static EvalReport from_csv(const std::string& text);
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;  // .csv or .json by extension

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Models behind the methods. "pre" and "post" use `base`, falling back to
/// the CLSR model's own base branch; "clsr" needs `clsr`.
struct MethodModels {
  const ClsrModel<float>* base = nullptr;
  const ClsrModel<float>* clsr = nullptr;
};

/// Methods: pre, post, clsr, bilinear, gt (identity on the ground truth).
EvalReport evaluate(const Dataset& data, const MethodModels& models, const std::vector<std::string>& methods,
                    int roi, int pad);

/// Base branch on the central region of side max(sizes), restored as
/// independent unpadded tiles of each size.
EvalReport sweep_input_size(const ClsrModel<float>& model, const Dataset& data,
                            const std::vector<int>& sizes);

/// CLSR per tile with the context limited to a ratio*roi square window
/// centred on the tile and shifted inside the image.
EvalReport sweep_context_size(const ClsrModel<float>& model, const Dataset& data,
                              const std::vector<int>& ratios, int roi);

/// CLSR per tile for each pad.
EvalReport sweep_padding(const ClsrModel<float>& model, const Dataset& data, const std::vector<int>& pads,
                         int roi);

/// The 2x2 {PIM} x {GCM} grid, each variant trained with identical seed and
/// iterations, in the order off/off, PIM only, GCM only, both.
struct AblationOptions {
  Config config;
  std::filesystem::path out_dir;
  /// Optional base-branch weights every variant starts from.
  std::filesystem::path init_from;
};
EvalReport run_ablation(const Dataset& train, const Dataset& test, const AblationOptions& opt);

/// Window of side `side` centred on `box`, shifted to lie inside the image.
RoiBox context_window(const RoiBox& box, int side, int height, int width);

}  // namespace clsr
