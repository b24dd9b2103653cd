#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "clsr/config.hpp"
#include "clsr/dataset.hpp"
#include "clsr/eval.hpp"
#include "clsr/metrics.hpp"
#include "clsr/model.hpp"
#include "clsr/service.hpp"
#include "clsr/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace clsr;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (sections core/backbone/gcm/pim/train/eval)")
        ->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Run seed (overrides core.seed)");
  }

  Config resolve() const {
    Config c = config_path.empty() ? Config{} : Config::load(config_path);
    if (seed) c.seed = *seed;
    return c;
  }
};

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size()) throw ConfigError("not an integer list: " + text);
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

RoiBox parse_box(const std::string& text) {
  const auto v = parse_ints(text);
  if (v.size() != 4) throw ConfigError("--box expects top,left,height,width");
  return {v[0], v[1], v[2], v[3]};
}

void dump_config(const Config& cfg, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cfg.save(path);
}

/// Sibling path for the effective config of a file output.
fs::path config_beside(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".config.json");
  return p;
}

Dataset load_data(const std::string& manifest) { return Dataset::from_manifest(manifest); }

ClsrModel<float> load_model(const std::string& weights) { return ClsrModel<float>::load(weights); }

Config with_model(Config cfg, const ModelConfig& m) {
  cfg.model = m;
  return cfg;
}

int cmd_prepare(const fs::path& out, int count, int test_count, int size, int test_size, int scale,
                const Config& cfg) {
  SynthOptions tr;
  tr.height = tr.width = size;
  SynthOptions te;
  te.height = te.width = test_size;
  write_synthetic_set(out / "train", count, tr, scale, cfg.seed, "synthetic-train");
  write_synthetic_set(out / "test", test_count, te, scale, cfg.seed, "synthetic-test");
  dump_config(cfg, out / "config.json");
  std::cout << "wrote " << count << " training and " << test_count << " test images to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-based local super-resolution: data, training, evaluation and serving"};
  app.require_subcommand(1);

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Generate the synthetic structured corpus");
  Common prep_c;
  prep_c.attach(prep);
  std::string prep_out;
  int prep_count = 20, prep_test = 4, prep_size = 768, prep_test_size = 768, prep_scale = 4;
  prep->add_option("--out", prep_out, "Output folder (train/ and test/ are created)")->required();
  prep->add_option("--count", prep_count, "Training image count");
  prep->add_option("--test-count", prep_test, "Held-out image count");
  prep->add_option("--size", prep_size, "Training HR side in pixels");
  prep->add_option("--test-size", prep_test_size, "Held-out HR side in pixels");
  prep->add_option("--scale", prep_scale, "Scale recorded in the manifests");

  // train
  auto* train = app.add_subcommand("train", "Train CLSR or the bare base branch");
  Common train_c;
  train_c.attach(train);
  std::string train_data, train_val, train_out, train_resume, train_phase, train_init;
  std::optional<int> train_iters;
  train->add_option("--data", train_data, "Training manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--val", train_val, "Validation manifest")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Output folder")->required();
  train->add_option("--iters", train_iters, "Iterations (overrides train.iters)");
  train->add_option("--resume", train_resume, "Checkpoint stem to resume, e.g. out/ckpt_001000");
  train->add_option("--phase", train_phase, "clsr or backbone (overrides train.phase)");
  train->add_option("--init-from", train_init, "Weights whose matching parameters seed the model");

  // eval
  auto* ev = app.add_subcommand("eval", "Tiled evaluation of one or more methods");
  Common ev_c;
  ev_c.attach(ev);
  std::string ev_weights, ev_base, ev_data, ev_methods = "pre,post,clsr", ev_out = "report.csv";
  std::optional<int> ev_roi, ev_pad;
  ev->add_option("--weights", ev_weights, "CLSR weights")->check(CLI::ExistingFile);
  ev->add_option("--base-weights", ev_base, "Base-branch weights for pre/post")->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Evaluation manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--methods", ev_methods, "Comma list of pre,post,clsr,bilinear,gt");
  ev->add_option("--roi", ev_roi, "ROI side (overrides eval.roi)");
  ev->add_option("--pad", ev_pad, "Padding (overrides eval.pad)");
  ev->add_option("--out", ev_out, "Report path (.csv or .json)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Input-size, context-size and padding sweeps");
  sweep->require_subcommand(1);
  struct SweepArgs {
    Common c;
    std::string weights, data, out = "sweep.csv", list;
    std::optional<int> roi;
  };
  SweepArgs sw_in, sw_ctx, sw_pad;
  auto add_sweep = [&](const char* name, const char* help, SweepArgs& a, const char* list_flag,
                       const char* list_default) {
    auto* s = sweep->add_subcommand(name, help);
    a.c.attach(s);
    a.list = list_default;
    s->add_option("--weights", a.weights, "Model weights")->required()->check(CLI::ExistingFile);
    s->add_option("--data", a.data, "Evaluation manifest")->required()->check(CLI::ExistingFile);
    s->add_option("--out", a.out, "Report path (.csv or .json)");
    s->add_option(list_flag, a.list, "Comma-separated values");
    s->add_option("--roi", a.roi, "ROI side (overrides eval.roi)");
    return s;
  };
  auto* sw_in_cmd = add_sweep("input-size", "Base branch on independent tiles of each size", sw_in, "--sizes",
                              "96,48,24");
  auto* sw_ctx_cmd = add_sweep("context-size", "CLSR with the context limited to ratio x ROI", sw_ctx,
                               "--ratios", "1,2,4,6,8");
  add_sweep("padding", "CLSR at each padding", sw_pad, "--pads", "0,2,4,8,12");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and evaluate the PIM x GCM grid");
  Common abl_c;
  abl_c.attach(abl);
  std::string abl_data, abl_test, abl_out, abl_init;
  std::optional<int> abl_iters;
  abl->add_option("--data", abl_data, "Training manifest")->required()->check(CLI::ExistingFile);
  abl->add_option("--test", abl_test, "Evaluation manifest")->required()->check(CLI::ExistingFile);
  abl->add_option("--out", abl_out, "Output folder")->required();
  abl->add_option("--iters", abl_iters, "Iterations per variant");
  abl->add_option("--init-from", abl_init, "Base-branch weights every variant starts from");

  // infer
  auto* inf = app.add_subcommand("infer", "Restore one ROI of an image");
  Common inf_c;
  inf_c.attach(inf);
  std::string inf_weights, inf_image, inf_box, inf_out = ".";
  std::optional<int> inf_scale, inf_pad;
  inf->add_option("--weights", inf_weights, "Model weights (default: freshly initialised model)")
      ->check(CLI::ExistingFile);
  inf->add_option("--image", inf_image, "LR context PNG")->required()->check(CLI::ExistingFile);
  inf->add_option("--box", inf_box, "top,left,height,width in LR pixels")->required();
  inf->add_option("--scale", inf_scale, "Expected scale; sets it for a fresh model");
  inf->add_option("--pad", inf_pad, "Padding (default core.pad)");
  inf->add_option("--out", inf_out, "Output folder for sr.png and diagnostics.json");

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP session service");
  Common srv_c;
  srv_c.attach(srv);
  std::string srv_weights, srv_host = "0.0.0.0";
  std::optional<int> srv_port, srv_max;
  srv->add_option("--weights", srv_weights, "Model weights (env CLSR_WEIGHTS)");
  srv->add_option("--host", srv_host, "Bind address");
  srv->add_option("--port", srv_port, "Port (env CLSR_PORT, default 8080)");
  srv->add_option("--max-sessions", srv_max, "Resident session cap (env CLSR_MAX_SESSIONS, default 16)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*prep) {
      return cmd_prepare(prep_out, prep_count, prep_test, prep_size, prep_test_size, prep_scale,
                         prep_c.resolve());
    }

    if (*train) {
      Config cfg = train_c.resolve();
      if (train_iters) cfg.train.iters = *train_iters;
      if (!train_phase.empty()) cfg.train.phase = train_phase;
      if (!train_init.empty()) cfg.train.init_from = train_init;
      if (cfg.train.phase == "backbone") {
        cfg.model.gcm.enabled = false;
        cfg.model.pim.enabled = false;
      }
      cfg.train.validate();
      const Dataset data = load_data(train_data);
      std::optional<Dataset> val;
      if (!train_val.empty()) val = load_data(train_val);
      ClsrModel<float> model(cfg.model, cfg.seed);
      if (!cfg.train.init_from.empty()) model.load_parameters(cfg.train.init_from, /*allow_missing=*/true);
      dump_config(cfg, fs::path(train_out) / "config.json");
      TrainOptions opt;
      opt.out_dir = train_out;
      if (!train_resume.empty()) opt.resume = fs::path(train_resume);
      const int every = std::max(1, cfg.train.iters / 20);
      opt.on_log = [every](const json& rec) {
        const int it = rec["iter"];
        if (it % every == 0 || !rec["val_psnr"].is_null()) std::cerr << rec.dump() << "\n";
      };
      const auto res = train_loop(model, data, val ? &*val : nullptr, cfg.train, cfg.seed, opt);
      std::cout << "trained " << res.iters << " iterations -> " << res.final_weights.string() << "\n";
      return 0;
    }

    if (*ev) {
      Config cfg = ev_c.resolve();
      if (ev_roi) cfg.eval.roi = *ev_roi;
      if (ev_pad) cfg.eval.pad = *ev_pad;
      cfg.eval.methods = parse_list(ev_methods);
      std::optional<ClsrModel<float>> clsr_model, base_model;
      if (!ev_weights.empty()) {
        clsr_model.emplace(load_model(ev_weights));
        cfg = with_model(cfg, clsr_model->config());
      }
      if (!ev_base.empty()) base_model.emplace(load_model(ev_base));
      const Dataset data = load_data(ev_data);
      MethodModels mm{base_model ? &*base_model : nullptr, clsr_model ? &*clsr_model : nullptr};
      EvalReport rep = evaluate(data, mm, cfg.eval.methods, cfg.eval.roi, cfg.eval.pad);
      rep.metadata["seed"] = cfg.seed;
      rep.metadata["config_hash"] = json_hash(to_json(cfg));
      rep.save(ev_out);
      dump_config(cfg, config_beside(ev_out));
      std::cout << rep.to_csv();
      return 0;
    }

    if (*sweep) {
      SweepArgs* a = sw_in_cmd->parsed() ? &sw_in : sw_ctx_cmd->parsed() ? &sw_ctx : &sw_pad;
      Config cfg = a->c.resolve();
      if (a->roi) cfg.eval.roi = *a->roi;
      const ClsrModel<float> model = load_model(a->weights);
      cfg = with_model(cfg, model.config());
      const Dataset data = load_data(a->data);
      const auto values = parse_ints(a->list);
      EvalReport rep = a == &sw_in    ? sweep_input_size(model, data, values)
                       : a == &sw_ctx ? sweep_context_size(model, data, values, cfg.eval.roi)
                                      : sweep_padding(model, data, values, cfg.eval.roi);
      rep.metadata["seed"] = cfg.seed;
      rep.metadata["config_hash"] = json_hash(to_json(cfg));
      rep.save(a->out);
      dump_config(cfg, config_beside(a->out));
      std::cout << rep.to_csv();
      return 0;
    }

    if (*abl) {
      Config cfg = abl_c.resolve();
      if (abl_iters) cfg.train.iters = *abl_iters;
      const Dataset data = load_data(abl_data);
      const Dataset test = load_data(abl_test);
      AblationOptions opt{cfg, abl_out, abl_init};
      dump_config(cfg, fs::path(abl_out) / "config.json");
      EvalReport rep = run_ablation(data, test, opt);
      rep.metadata["config_hash"] = json_hash(to_json(cfg));
      rep.save(fs::path(abl_out) / "ablation.csv");
      std::cout << rep.to_csv();
      return 0;
    }

    if (*inf) {
      Config cfg = inf_c.resolve();
      std::optional<ClsrModel<float>> model;
      if (!inf_weights.empty()) {
        model.emplace(load_model(inf_weights));
        if (inf_scale && *inf_scale != model->scale()) {
          throw ConfigError("--scale " + std::to_string(*inf_scale) + " does not match the weights' scale " +
                            std::to_string(model->scale()));
        }
      } else {
        if (inf_scale) cfg.model.backbone.scale = *inf_scale;
        model.emplace(cfg.model, cfg.seed);
      }
      model->set_training(false);
      cfg = with_model(cfg, model->config());
      const Image img = load_png(inf_image);
      const RoiBox box = parse_box(inf_box);
      const int pad = inf_pad.value_or(model->config().pad);
      const auto ctx = model->prepare_context(img);
      RoiDiagnostics diag;
      const Image sr = restore_roi(*model, ctx, box, pad, &diag);
      const fs::path out(inf_out);
      fs::create_directories(out);
      save_png(sr, out / "sr.png");

      json heads = json::array();
      for (const auto& h : diag.attention.per_head) {
        // Mean weight per bank patch over all query positions.
        const int nq = h.dim(0), np = h.dim(1);
        std::vector<double> mean(static_cast<std::size_t>(np), 0.0);
        for (int q = 0; q < nq; ++q)
          for (int p = 0; p < np; ++p) mean[static_cast<std::size_t>(p)] += h.data()[q * np + p] / nq;
        heads.push_back(mean);
      }
      json centers = json::array();
      for (const auto& c : diag.attention.centers) centers.push_back({c.row, c.col});
      json d{{"box", {box.top, box.left, box.height, box.width}},
             {"pad", pad},
             {"scale", model->scale()},
             {"output", {sr.height(), sr.width()}},
             {"flops", {{"base", diag.flops.base}, {"gcm", diag.flops.gcm}, {"pim", diag.flops.pim},
                        {"total", diag.flops.total()}}},
             {"attention", {{"patch_centers", centers}, {"mean_weight_per_head", heads},
                            {"query_grid", {diag.attention.query_height, diag.attention.query_width}}}}};
      std::ofstream(out / "diagnostics.json") << d.dump(2) << "\n";
      dump_config(cfg, out / "config.json");
      std::cout << "wrote " << (out / "sr.png").string() << " (" << sr.height() << "x" << sr.width() << ")\n";
      return 0;
    }

    if (*srv) {
      Config cfg = srv_c.resolve();
      if (srv_weights.empty()) {
        if (const char* e = std::getenv("CLSR_WEIGHTS")) srv_weights = e;
      }
      if (!srv_port) {
        const char* e = std::getenv("CLSR_PORT");
        srv_port = e ? std::stoi(e) : 8080;
      }
      ServiceConfig scfg;
      if (srv_max) {
        scfg.max_sessions = static_cast<std::size_t>(*srv_max);
      } else if (const char* e = std::getenv("CLSR_MAX_SESSIONS")) {
        scfg.max_sessions = static_cast<std::size_t>(std::stoul(e));
      }
      auto model = srv_weights.empty() ? std::make_shared<ClsrModel<float>>(cfg.model, cfg.seed)
                                       : std::make_shared<ClsrModel<float>>(load_model(srv_weights));
      model->set_training(false);
      auto store = std::make_shared<SessionStore>(model, scfg);
      HttpService http(store);
      const int port = http.bind(srv_host, *srv_port);
      std::cerr << "serving on " << srv_host << ":" << port << " (model " << model_hash(*model) << ")\n";
      http.serve();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
