#include "clsr/eval.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "clsr/error.hpp"
#include "clsr/metrics.hpp"
#include "clsr/train.hpp"

#ifndef CLSR_VERSION
#define CLSR_VERSION "0.0.0"
#endif

namespace clsr {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<RoiBox> tile_image(int height, int width, int roi) {
  if (roi < 1) throw ConfigError("roi must be >= 1");
  if (height % roi || width % roi) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not a multiple of roi " + std::to_string(roi) + "; crop it first");
  }
  std::vector<RoiBox> out;
  for (int y = 0; y < height; y += roi)
    for (int x = 0; x < width; x += roi) out.push_back({y, x, roi, roi});
  return out;
}

SamplePair crop_to_multiple(const SamplePair& pair, int roi) {
  const int h = pair.lr.height() / roi * roi, w = pair.lr.width() / roi * roi;
  if (h == 0 || w == 0) throw ShapeError("image smaller than roi " + std::to_string(roi));
  if (h == pair.lr.height() && w == pair.lr.width()) return pair;
  const RoiBox box{0, 0, h, w};
  return {crop(pair.lr, box), crop_hr(pair.hr, box, pair.scale), pair.scale};
}

namespace {

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw DecodeError("bad number in report: " + s);
  return v;
}

json number_json(double v) {
  if (std::isfinite(v)) return v;
  return fmt_double(v);
}

double number_from(const json& j) { return j.is_string() ? parse_double(j.get<std::string>()) : j.get<double>(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

constexpr const char* kCsvHeader = "method,dataset,roi_size,pad,psnr_mean,ssim_mean,flops_total,variant";
constexpr const char* kMetaPrefix = "# metadata: ";

json base_metadata() {
  return {{"version", "clsr " CLSR_VERSION},
          {"crop_anchor", "top-left"},
          {"aggregation", "mean over tiles"},
          {"psnr", "RGB, no border crop"},
          {"ssim", "BT.601 luma, 11x11 gaussian sigma 1.5"}};
}

struct Accumulator {
  double psnr = 0, ssim = 0, flops = 0;
  long tiles = 0;
  long images = 0;

  void add(const Image& sr, const Image& hr) {
    psnr += clsr::psnr(sr, hr);
    ssim += clsr::ssim(sr, hr);
    ++tiles;
  }
  ReportRow row(std::string method, std::string dataset, int roi, int pad, std::string variant = {}) const {
    ReportRow r;
    r.method = std::move(method);
    r.dataset = std::move(dataset);
    r.roi_size = roi;
    r.pad = pad;
    r.psnr_mean = tiles ? psnr / static_cast<double>(tiles) : 0.0;
    r.ssim_mean = tiles ? ssim / static_cast<double>(tiles) : 0.0;
    r.flops_total = images ? flops / static_cast<double>(images) : 0.0;
    r.variant = std::move(variant);
    return r;
  }
};

void check_scale(const ClsrModel<float>& m, const SamplePair& p) {
  if (m.scale() != p.scale) {
    throw ConfigError("model scale " + std::to_string(m.scale()) + " does not match data scale " +
                      std::to_string(p.scale));
  }
}

void paste(Image& dst, const Image& src, int top, int left) {
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < src.height(); ++y)
      for (int x = 0; x < src.width(); ++x) dst.at(c, top + y, left + x) = src.at(c, y, x);
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << kMetaPrefix << metadata.dump() << "\n" << kCsvHeader << "\n";
  for (const auto& r : rows) {
    os << csv_field(r.method) << ',' << csv_field(r.dataset) << ',' << r.roi_size << ',' << r.pad << ','
       << fmt_double(r.psnr_mean) << ',' << fmt_double(r.ssim_mean) << ',' << fmt_double(r.flops_total)
       << ',' << csv_field(r.variant) << "\n";
  }
  return os.str();
}

EvalReport EvalReport::from_csv(const std::string& text) {
  EvalReport rep;
  std::istringstream is(text);
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind(kMetaPrefix, 0) == 0) {
      rep.metadata = json::parse(line.substr(std::string(kMetaPrefix).size()));
      continue;
    }
    if (!header) {
      if (line != kCsvHeader) throw DecodeError("unexpected report header: " + line);
      header = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 8) throw DecodeError("report row has " + std::to_string(f.size()) + " fields");
    ReportRow r;
    r.method = f[0];
    r.dataset = f[1];
    r.roi_size = std::stoi(f[2]);
    r.pad = std::stoi(f[3]);
    r.psnr_mean = parse_double(f[4]);
    r.ssim_mean = parse_double(f[5]);
    r.flops_total = parse_double(f[6]);
    r.variant = f[7];
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

json EvalReport::to_json() const {
  json rs = json::array();
  for (const auto& r : rows) {
    rs.push_back({{"method", r.method},
                  {"dataset", r.dataset},
                  {"roi_size", r.roi_size},
                  {"pad", r.pad},
                  {"psnr_mean", number_json(r.psnr_mean)},
                  {"ssim_mean", number_json(r.ssim_mean)},
                  {"flops_total", number_json(r.flops_total)},
                  {"variant", r.variant}});
  }
  return {{"metadata", metadata}, {"rows", rs}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport rep;
  rep.metadata = j.value("metadata", json::object());
  for (const auto& r : j.at("rows")) {
    ReportRow row;
    row.method = r.at("method").get<std::string>();
    row.dataset = r.at("dataset").get<std::string>();
    row.roi_size = r.at("roi_size").get<int>();
    row.pad = r.at("pad").get<int>();
    row.psnr_mean = number_from(r.at("psnr_mean"));
    row.ssim_mean = number_from(r.at("ssim_mean"));
    row.flops_total = number_from(r.at("flops_total"));
    row.variant = r.value("variant", "");
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void EvalReport::save(const fs::path& path) const {
  std::ofstream f(path);
  if (!f) throw Error("cannot write report " + path.string());
  if (path.extension() == ".json") {
    f << to_json().dump(2) << "\n";
  } else {
    f << to_csv();
  }
}

EvalReport evaluate(const Dataset& data, const MethodModels& models, const std::vector<std::string>& methods,
                    int roi, int pad) {
  const ClsrModel<float>* base = models.base ? models.base : models.clsr;
  for (const auto& m : methods) {
    if ((m == "pre" || m == "post") && !base) throw ConfigError("method " + m + " needs model weights");
    if (m == "clsr" && !models.clsr) throw ConfigError("method clsr needs CLSR weights");
    if (m != "pre" && m != "post" && m != "clsr" && m != "bilinear" && m != "gt") {
      throw ConfigError("unknown method " + m);
    }
  }
  std::vector<Accumulator> acc(methods.size());
  for (const auto& raw : data.pairs) {
    const SamplePair pair = crop_to_multiple(raw, roi);
    const int s = pair.scale;
    const Extent ext{pair.lr.height(), pair.lr.width()};
    const auto tiles = tile_image(ext.height, ext.width, roi);
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      const std::string& m = methods[mi];
      Accumulator& a = acc[mi];
      ++a.images;
      if (m == "gt") {
        for (const auto& t : tiles) a.add(crop_hr(pair.hr, t, s), crop_hr(pair.hr, t, s));
      } else if (m == "bilinear") {
        for (const auto& t : tiles) {
          a.add(clamp01(resize_bilinear(crop(pair.lr, t), t.height * s, t.width * s)), crop_hr(pair.hr, t, s));
        }
        a.flops += 8.0 * 3 * roi * s * roi * s;
      } else if (m == "pre") {
        check_scale(*base, pair);
        for (const auto& t : tiles) {
          a.add(clamp01(base->pre_crop_forward(pair.lr, t, pad).value()), crop_hr(pair.hr, t, s));
        }
        a.flops += static_cast<double>(pre_crop_flops(base->config(), {roi, roi}));
      } else if (m == "post") {
        check_scale(*base, pair);
        const Image full = clamp01(base->post_crop_forward(pair.lr, {0, 0, ext.height, ext.width}).value());
        for (const auto& t : tiles) a.add(crop_hr(full, t, s), crop_hr(pair.hr, t, s));
        a.flops += static_cast<double>(post_crop_flops(base->config(), ext));
      } else {
        check_scale(*models.clsr, pair);
        const auto ctx = models.clsr->prepare_context(pair.lr);
        for (const auto& t : tiles) a.add(restore_roi(*models.clsr, ctx, t, pad), crop_hr(pair.hr, t, s));
        a.flops += static_cast<double>(flops_estimate(models.clsr->config(), {roi, roi}, ext).total());
      }
    }
  }
  EvalReport rep;
  rep.metadata = base_metadata();
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const bool padded = methods[mi] == "pre" || methods[mi] == "clsr";
    rep.rows.push_back(acc[mi].row(methods[mi], data.name, roi, padded ? pad : 0));
  }
  return rep;
}

EvalReport sweep_input_size(const ClsrModel<float>& model, const Dataset& data, const std::vector<int>& sizes) {
  if (sizes.empty()) throw ConfigError("input-size sweep needs at least one size");
  const int side = *std::max_element(sizes.begin(), sizes.end());
  for (int sz : sizes) {
    if (sz < 1 || side % sz) throw ConfigError("every sweep size must divide " + std::to_string(side));
  }
  std::vector<Accumulator> acc(sizes.size());
  for (const auto& pair : data.pairs) {
    check_scale(model, pair);
    const int s = pair.scale;
    if (pair.lr.height() < side || pair.lr.width() < side) {
      throw ShapeError("image smaller than the sweep region " + std::to_string(side));
    }
    const RoiBox region{(pair.lr.height() - side) / 2, (pair.lr.width() - side) / 2, side, side};
    const Image lr = crop(pair.lr, region);
    const Image hr = crop_hr(pair.hr, region, s);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      Image out = Image::chw(3, side * s, side * s);
      for (const auto& t : tile_image(side, side, sizes[i])) {
        const Image sr = clamp01(model.backbone().forward(Var<float>::constant(crop(lr, t))).value());
        paste(out, sr, t.top * s, t.left * s);
      }
      acc[i].add(out, hr);
      ++acc[i].images;
      const auto n = static_cast<double>((side / sizes[i]) * (side / sizes[i]));
      acc[i].flops += n * static_cast<double>(backbone_flops(model.config().backbone,
                                                             model.config().backbone.channels,
                                                             {sizes[i], sizes[i]}));
    }
  }
  EvalReport rep;
  rep.metadata = base_metadata();
  rep.metadata["sweep"] = "input_size";
  rep.metadata["region"] = side;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    rep.rows.push_back(acc[i].row("pre", data.name, sizes[i], 0, "size=" + std::to_string(sizes[i])));
  }
  return rep;
}

RoiBox context_window(const RoiBox& box, int side, int height, int width) {
  const int h = std::min(side, height), w = std::min(side, width);
  int top = box.top + box.height / 2 - h / 2;
  int left = box.left + box.width / 2 - w / 2;
  top = std::clamp(top, 0, height - h);
  left = std::clamp(left, 0, width - w);
  return {top, left, h, w};
}

EvalReport sweep_context_size(const ClsrModel<float>& model, const Dataset& data, const std::vector<int>& ratios,
                              int roi) {
  std::vector<Accumulator> acc(ratios.size());
  const int pad = model.config().pad;
  for (const auto& raw : data.pairs) {
    check_scale(model, raw);
    const SamplePair pair = crop_to_multiple(raw, roi);
    const int s = pair.scale;
    const auto tiles = tile_image(pair.lr.height(), pair.lr.width(), roi);
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      if (ratios[i] < 1) throw ConfigError("context ratio must be >= 1");
      double flops = 0;
      for (const auto& t : tiles) {
        const RoiBox win = context_window(t, ratios[i] * roi, pair.lr.height(), pair.lr.width());
        const auto ctx = model.prepare_context(crop(pair.lr, win));
        const RoiBox local{t.top - win.top, t.left - win.left, t.height, t.width};
        acc[i].add(restore_roi(model, ctx, local, pad), crop_hr(pair.hr, t, s));
        flops += static_cast<double>(flops_estimate(model.config(), {roi, roi}, {win.height, win.width}).total());
      }
      acc[i].flops += flops / static_cast<double>(tiles.size());
      ++acc[i].images;
    }
  }
  EvalReport rep;
  rep.metadata = base_metadata();
  rep.metadata["sweep"] = "context_size";
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    rep.rows.push_back(acc[i].row("clsr", data.name, roi, pad, "ratio=" + std::to_string(ratios[i])));
  }
  return rep;
}

EvalReport sweep_padding(const ClsrModel<float>& model, const Dataset& data, const std::vector<int>& pads, int roi) {
  std::vector<Accumulator> acc(pads.size());
  for (const auto& raw : data.pairs) {
    check_scale(model, raw);
    const SamplePair pair = crop_to_multiple(raw, roi);
    const int s = pair.scale;
    const Extent ext{pair.lr.height(), pair.lr.width()};
    const auto tiles = tile_image(ext.height, ext.width, roi);
    const auto ctx = model.prepare_context(pair.lr);
    for (std::size_t i = 0; i < pads.size(); ++i) {
      for (const auto& t : tiles) acc[i].add(restore_roi(model, ctx, t, pads[i]), crop_hr(pair.hr, t, s));
      ModelConfig cfg = model.config();
      cfg.pad = pads[i];
      acc[i].flops += static_cast<double>(flops_estimate(cfg, {roi, roi}, ext).total());
      ++acc[i].images;
    }
  }
  EvalReport rep;
  rep.metadata = base_metadata();
  rep.metadata["sweep"] = "padding";
  for (std::size_t i = 0; i < pads.size(); ++i) {
    rep.rows.push_back(acc[i].row("clsr", data.name, roi, pads[i], "pad=" + std::to_string(pads[i])));
  }
  return rep;
}

EvalReport run_ablation(const Dataset& train, const Dataset& test, const AblationOptions& opt) {
  struct Variant {
    bool pim, gcm;
  };
  const Variant grid[] = {{false, false}, {true, false}, {false, true}, {true, true}};
  EvalReport rep;
  rep.metadata = base_metadata();
  rep.metadata["ablation"] = "pim x gcm";
  rep.metadata["seed"] = opt.config.seed;
  for (const auto& v : grid) {
    Config cfg = opt.config;
    cfg.model.pim.enabled = v.pim;
    cfg.model.gcm.enabled = v.gcm;
    const std::string name = std::string("pim=") + (v.pim ? "on" : "off") + ",gcm=" + (v.gcm ? "on" : "off");
    ClsrModel<float> model(cfg.model, cfg.seed);
    if (!opt.init_from.empty()) model.load_parameters(opt.init_from, /*allow_missing=*/true);
    TrainOptions topt;
    topt.out_dir = opt.out_dir / (std::string("pim_") + (v.pim ? "on" : "off") + "_gcm_" + (v.gcm ? "on" : "off"));
    train_loop(model, train, nullptr, cfg.train, cfg.seed, topt);
    EvalReport r = evaluate(test, {nullptr, &model}, {"clsr"}, cfg.eval.roi, cfg.eval.pad);
    r.rows.front().variant = name;
    rep.rows.push_back(r.rows.front());
  }
  return rep;
}

}  // namespace clsr
