#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "clsr/tensor.hpp"

namespace clsr {

/// Parameter container file:
///
///   bytes 0..7   magic "CLSRW001"
///   bytes 8..15  little-endian u64 length L of the JSON index
///   next L bytes JSON index {name: {"dtype": "f32", "shape": [...], "byte_offset": n}}
///   remainder    little-endian float32 blob; byte_offset is relative to its start
///
/// The reserved index key "__config__" carries the model configuration.
inline constexpr char kWeightsMagic[] = "CLSRW001";

struct WeightsFile {
  std::map<std::string, Tensor<float>> tensors;
  std::optional<nlohmann::json> config;
};

void save_weights(const std::filesystem::path& path, const WeightsFile& file);
WeightsFile load_weights(const std::filesystem::path& path);

}  // namespace clsr
