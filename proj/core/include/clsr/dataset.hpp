#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "clsr/config.hpp"
#include "clsr/image.hpp"

namespace clsr {

/// One manifest record. Relative paths resolve against the manifest's folder.
struct ManifestEntry {
  std::filesystem::path hr_path;
  int scale = 4;
};

/// The manifest is a JSON list of {"hr_path": ..., "scale": ...} records.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// HR images with their bicubic-degraded LR counterparts. HR is cropped
/// (top-left anchored) to a multiple of the scale before degradation.
struct Dataset {
  std::string name;
  std::vector<std::string> ids;
  std::vector<SamplePair> pairs;

  std::size_t size() const { return pairs.size(); }
  static Dataset from_manifest(const std::filesystem::path& manifest, std::string name = {});
  void add(std::string id, const Image& hr, int scale);
};

/// Structured test imagery: gratings, checkerboards and glyph rows laid out
/// in blocks. Each image has one waveform style (hard or smooth edges) and
/// one colour palette shared by all of its blocks, so distant coarse blocks
/// reveal how the fine, locally ambiguous blocks should look.
struct SynthOptions {
  int height = 768;
  int width = 768;
  int block = 192;
  int supersample = 3;
  int motifs = 3;
  double magnified = 0.4;
};

Image synth_image(const SynthOptions& opt, std::mt19937_64& rng);

/// Writes `count` synthetic PNGs plus a manifest.json into `dir`.
std::vector<ManifestEntry> write_synthetic_set(const std::filesystem::path& dir, int count,
                                               const SynthOptions& opt, int scale, std::uint64_t seed,
                                               const std::string& stream);

/// A training example: LR context patch, its centred ROI box, the HR ground
/// truth of both.
struct TrainSample {
  Image context;
  RoiBox box;
  Image hr_roi;
  Image hr_context;
};

/// Random HR crop of scale * context_patch, degraded to LR. Images smaller
/// than that are skipped with a warning on stderr.
TrainSample sample_training_pair(const Dataset& data, const TrainConfig& cfg, int scale,
                                 std::mt19937_64& rng);

/// The centred ROI of a context patch.
RoiBox centered_roi(const TrainConfig& cfg);

}  // namespace clsr
