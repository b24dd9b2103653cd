#include "clsr/dataset.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "clsr/error.hpp"
#include "clsr/nn.hpp"

namespace clsr {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read manifest " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw ConfigError(path.string() + ": manifest must be a JSON list");
  std::vector<ManifestEntry> out;
  for (const auto& rec : j) {
    ManifestEntry e;
    e.hr_path = rec.at("hr_path").get<std::string>();
    if (e.hr_path.is_relative()) e.hr_path = path.parent_path() / e.hr_path;
    e.scale = rec.value("scale", 4);
    if (e.scale < 1) throw ConfigError(path.string() + ": scale must be >= 1");
    out.push_back(std::move(e));
  }
  return out;
}

void save_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  json j = json::array();
  for (const auto& e : entries) {
    fs::path p = e.hr_path;
    if (p.is_absolute() && p.parent_path() == path.parent_path()) p = p.filename();
    j.push_back({{"hr_path", p.generic_string()}, {"scale", e.scale}});
  }
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write manifest " + path.string());
  f << j.dump(2) << "\n";
}

void Dataset::add(std::string id, const Image& hr, int scale) {
  const int h = hr.height() / scale * scale, w = hr.width() / scale * scale;
  if (h < scale || w < scale) throw ShapeError(id + ": image smaller than the scale factor");
  Image cropped = (h == hr.height() && w == hr.width()) ? hr : crop(hr, RoiBox{0, 0, h, w});
  SamplePair p;
  p.lr = degrade(cropped, scale);
  p.hr = std::move(cropped);
  p.scale = scale;
  ids.push_back(std::move(id));
  pairs.push_back(std::move(p));
}

Dataset Dataset::from_manifest(const fs::path& manifest, std::string name) {
  Dataset d;
  d.name = name.empty() ? manifest.parent_path().filename().string() : std::move(name);
  for (const auto& e : load_manifest(manifest)) d.add(e.hr_path.filename().string(), load_png(e.hr_path), e.scale);
  return d;
}

namespace {

using Rgb = std::array<double, 3>;

struct Block {
  enum Kind { Grating, Checker, Glyphs } kind;
  double period;  // HR pixels per cycle (grating), cell side (checker, glyphs)
  double angle;
  double phase;
  Rgb a, b;
  std::vector<std::vector<std::array<double, 4>>> glyph_strokes;  // per glyph, segments in [0,1]^2
  std::vector<int> glyph_index;  // per cell
  int glyph_cols = 1;
};

double segment_distance(double px, double py, const std::array<double, 4>& s) {
  const double dx = s[2] - s[0], dy = s[3] - s[1];
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s[0]) * dx + (py - s[1]) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (s[0] + t * dx), py - (s[1] + t * dy));
}

/// Coverage in [0, 1] of colour b at block-local position (y, x).
double block_value(const Block& blk, bool hard, double y, double x) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  switch (blk.kind) {
    case Block::Grating: {
      const double t = (x * std::cos(blk.angle) + y * std::sin(blk.angle)) / blk.period + blk.phase;
      if (hard) return t - std::floor(t) < 0.5 ? 1.0 : 0.0;
      return 0.5 + 0.5 * std::sin(kTwoPi * t);
    }
    case Block::Checker: {
      const double u = x / blk.period + blk.phase, v = y / blk.period + blk.phase;
      if (hard) return (static_cast<long>(std::floor(u)) + static_cast<long>(std::floor(v))) & 1 ? 1.0 : 0.0;
      return 0.5 + 0.5 * std::sin(std::numbers::pi * u) * std::sin(std::numbers::pi * v);
    }
    case Block::Glyphs: {
      const int gy = static_cast<int>(std::floor(y / blk.period));
      const int gx = static_cast<int>(std::floor(x / blk.period));
      const double ly = y / blk.period - gy, lx = x / blk.period - gx;
      const auto idx = static_cast<std::size_t>(gy * blk.glyph_cols + gx);
      if (idx >= blk.glyph_index.size()) return 0.0;
      const auto& strokes = blk.glyph_strokes[static_cast<std::size_t>(blk.glyph_index[idx])];
      double d = 1e9;
      for (const auto& s : strokes) d = std::min(d, segment_distance(lx, ly, s));
      const double half = 0.09;
      if (hard) return d < half ? 1.0 : 0.0;
      return std::exp(-0.5 * (d / half) * (d / half));
    }
  }
  return 0.0;
}

}  // namespace

Image synth_image(const SynthOptions& opt, std::mt19937_64& rng) {
  if (opt.height < 1 || opt.width < 1 || opt.block < 1 || opt.supersample < 1) {
    throw ConfigError("synthetic image options must be positive");
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const bool hard = u01(rng) < 0.5;

  // Palette of four colours; each block draws an ordered pair from it.
  std::array<Rgb, 4> palette;
  for (auto& c : palette)
    for (auto& v : c) v = uni(0.05, 0.95);

  // Alphabet of six glyphs, shared across the image.
  std::vector<std::vector<std::array<double, 4>>> alphabet(6);
  for (auto& g : alphabet) {
    const int strokes = 2 + static_cast<int>(u01(rng) * 3);
    for (int s = 0; s < strokes; ++s) {
      g.push_back({uni(0.15, 0.85), uni(0.15, 0.85), uni(0.15, 0.85), uni(0.15, 0.85)});
    }
  }

  // Motifs shared across the image; each block renders one at native or
  // magnified scale, so a fine texture usually has a coarse exemplar.
  std::vector<Block> motifs(static_cast<std::size_t>(std::max(1, opt.motifs)));
  for (auto& m : motifs) {
    const double r = u01(rng);
    if (r < 0.45) {
      m.kind = Block::Grating;
      m.period = uni(10, 16);
    } else if (r < 0.75) {
      m.kind = Block::Checker;
      m.period = uni(6, 10);
    } else {
      m.kind = Block::Glyphs;
      m.period = uni(12, 18);
      m.glyph_strokes = alphabet;
    }
    m.angle = std::floor(u01(rng) * 4) * std::numbers::pi / 4 + uni(-0.15, 0.15);
    const int ia = static_cast<int>(u01(rng) * 4) % 4;
    int ib = static_cast<int>(u01(rng) * 3) % 3;
    if (ib >= ia) ++ib;
    m.a = palette[static_cast<std::size_t>(ia)];
    m.b = palette[static_cast<std::size_t>(ib)];
  }

  const int by = (opt.height + opt.block - 1) / opt.block;
  const int bx = (opt.width + opt.block - 1) / opt.block;
  std::vector<Block> blocks;
  for (int i = 0; i < by * bx; ++i) {
    Block b = motifs[static_cast<std::size_t>(u01(rng) * static_cast<double>(motifs.size())) % motifs.size()];
    if (u01(rng) < opt.magnified) b.period *= 3.0;
    b.phase = u01(rng);
    if (b.kind == Block::Glyphs) {
      b.glyph_cols = static_cast<int>(std::ceil(opt.block / b.period));
      const int cells = b.glyph_cols * b.glyph_cols;
      for (int c = 0; c < cells; ++c) b.glyph_index.push_back(static_cast<int>(u01(rng) * 6) % 6);
    }
    blocks.push_back(std::move(b));
  }

  Image img = Image::chw(3, opt.height, opt.width);
  const int ss = opt.supersample;
  const double inv = 1.0 / (ss * ss);
  for (int y = 0; y < opt.height; ++y) {
    for (int x = 0; x < opt.width; ++x) {
      const Block& blk = blocks[static_cast<std::size_t>((y / opt.block) * bx + x / opt.block)];
      const double oy = (y / opt.block) * opt.block, ox = (x / opt.block) * opt.block;
      double cov = 0.0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          cov += block_value(blk, hard, y - oy + (sy + 0.5) / ss, x - ox + (sx + 0.5) / ss);
        }
      }
      cov *= inv;
      for (int c = 0; c < 3; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        img.at(c, y, x) = static_cast<float>(blk.a[cc] + (blk.b[cc] - blk.a[cc]) * cov);
      }
    }
  }
  return img;
}

std::vector<ManifestEntry> write_synthetic_set(const fs::path& dir, int count, const SynthOptions& opt,
                                               int scale, std::uint64_t seed, const std::string& stream) {
  fs::create_directories(dir);
  std::mt19937_64 rng = make_rng(seed, stream);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03d.png", i);
    save_png(synth_image(opt, rng), dir / name);
    entries.push_back({dir / name, scale});
  }
  save_manifest(dir / "manifest.json", entries);
  return entries;
}

RoiBox centered_roi(const TrainConfig& cfg) {
  const int m = cfg.margin();
  return {m, m, cfg.roi_patch, cfg.roi_patch};
}

TrainSample sample_training_pair(const Dataset& data, const TrainConfig& cfg, int scale,
                                 std::mt19937_64& rng) {
  if (data.size() == 0) throw ConfigError("training set is empty");
  const int side = cfg.context_patch * scale;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const auto idx = static_cast<std::size_t>(rng() % data.size());
    const Image& hr = data.pairs[idx].hr;
    if (hr.height() < side || hr.width() < side) {
      std::cerr << "warning: skipping " << data.ids[idx] << " (smaller than " << side << "x" << side
                << ")\n";
      continue;
    }
    const int top = static_cast<int>(rng() % static_cast<std::uint64_t>(hr.height() - side + 1));
    const int left = static_cast<int>(rng() % static_cast<std::uint64_t>(hr.width() - side + 1));
    TrainSample s;
    s.hr_context = crop(hr, RoiBox{top, left, side, side});
    s.context = degrade(s.hr_context, scale);
    s.box = centered_roi(cfg);
    s.hr_roi = crop_hr(s.hr_context, s.box, scale);
    return s;
  }
  throw ConfigError("no training image is large enough for context_patch " +
                    std::to_string(cfg.context_patch));
}

}  // namespace clsr
