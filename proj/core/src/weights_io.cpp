#include "clsr/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "clsr/error.hpp"

namespace clsr {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "weights I/O assumes a little-endian host");

namespace {
constexpr std::size_t kMagicLen = 8;
constexpr const char* kConfigKey = "__config__";
}  // namespace

void save_weights(const std::filesystem::path& path, const WeightsFile& file) {
  json index = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    index[name] = {{"dtype", "f32"}, {"shape", t.shape()}, {"byte_offset", offset}};
    offset += t.size() * sizeof(float);
  }
  if (file.config) index[kConfigKey] = *file.config;
  const std::string header = index.dump();
  const std::uint64_t len = header.size();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw Error("cannot write weights " + path.string());
    f.write(kWeightsMagic, kMagicLen);
    f.write(reinterpret_cast<const char*>(&len), sizeof len);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : file.tensors) {
      f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!f) throw Error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

WeightsFile load_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DecodeError("cannot read weights " + path.string());
  char magic[kMagicLen];
  std::uint64_t len = 0;
  f.read(magic, kMagicLen);
  if (!f || std::memcmp(magic, kWeightsMagic, kMagicLen) != 0) {
    throw DecodeError(path.string() + ": bad weights magic");
  }
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f || len > (1ull << 30)) throw DecodeError(path.string() + ": bad index length");
  std::string header(len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(len));
  if (!f) throw DecodeError(path.string() + ": truncated index");
  std::vector<char> blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  json index;
  try {
    index = json::parse(header);
  } catch (const json::exception& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
  WeightsFile out;
  for (const auto& [name, entry] : index.items()) {
    if (name == kConfigKey) {
      out.config = entry;
      continue;
    }
    if (entry.at("dtype") != "f32") throw DecodeError(name + ": unsupported dtype");
    Shape shape = entry.at("shape").get<Shape>();
    const std::uint64_t off = entry.at("byte_offset").get<std::uint64_t>();
    Tensor<float> t(shape);
    const std::size_t bytes = t.size() * sizeof(float);
    if (off + bytes > blob.size()) throw DecodeError(name + ": tensor extends past blob");
    std::memcpy(t.data(), blob.data() + off, bytes);
    out.tensors.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace clsr
