#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "clsr/train.hpp"
#include "test_support.hpp"

namespace clsr {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("clsr_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.context_patch = 24;
  t.roi_patch = 8;
  t.iters = 6;
  t.batch_size = 2;
  t.lr = 1e-3;
  t.checkpoint_every = 3;
  t.val_every = 3;
  t.val_rois = 2;
  return t;
}

Dataset tiny_dataset(std::uint64_t seed, int count = 1) {
  Dataset d;
  d.name = "tiny";
  SynthOptions opt{96, 96, 48, 1};
  auto rng = make_rng(seed, "data");
  for (int i = 0; i < count; ++i) d.add("img" + std::to_string(i), synth_image(opt, rng), 2);
  return d;
}

TEST(Loss, Examples) {
  const Tensor<float> y({3, 4, 4}, 0.5f);
  const auto same = Var<float>::constant(y);
  EXPECT_EQ(clsr_loss<float>(same, y, Var<float>(), nullptr, 0.5).value()[0], 0.0f);
  const auto off = Var<float>::constant(Tensor<float>({3, 4, 4}, 0.6f));
  EXPECT_NEAR(clsr_loss<float>(off, y, Var<float>(), nullptr, 0.0).value()[0], 0.1, 1e-6);
  const Tensor<float> yc({3, 8, 8}, 0.1f);
  const auto pc = Var<float>::constant(Tensor<float>({3, 8, 8}, 0.3f));
  const auto p2 = Var<float>::constant(Tensor<float>({3, 4, 4}, 0.7f));
  LossParts parts;
  EXPECT_NEAR(clsr_loss<float>(p2, y, pc, &yc, 0.5, &parts).value()[0], 0.3, 1e-6);
  EXPECT_NEAR(parts.roi, 0.2, 1e-6);
  EXPECT_NEAR(parts.ctx, 0.2, 1e-6);
  EXPECT_THROW(clsr_loss<float>(p2, y, pc, nullptr, 0.5), ShapeError);
}

TEST(LambdaSchedule, Endpoints) {
  EXPECT_EQ(lambda_schedule(0, 1000, 0.5), 0.5);
  EXPECT_EQ(lambda_schedule(1000, 1000, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(lambda_schedule(500, 1000, 0.5), 0.25);
  for (auto shape : {LambdaShape::Cosine, LambdaShape::Step}) {
    EXPECT_EQ(lambda_schedule(0, 1000, 0.5, shape), 0.5);
    EXPECT_EQ(lambda_schedule(1000, 1000, 0.5, shape), 0.0);
  }
  double prev = 1.0;
  for (int i = 0; i <= 100; ++i) {
    const double l = lambda_schedule(i, 100, 0.5, LambdaShape::Cosine);
    EXPECT_LE(l, prev);
    prev = l;
  }
  EXPECT_THROW(lambda_schedule(1001, 1000, 0.5), ConfigError);
}

TEST(CosineLr, Shape) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3), 1e-3);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3), 5e-4, 1e-15);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3), 0.0, 1e-18);
}

TEST(AdamOptimizer, MinimisesQuadratic) {
  ParamStore<float> store;
  auto w = store.add("w", Tensor<float>({2}, std::vector<float>{3.0f, -2.0f}));
  auto unused = store.add("u", Tensor<float>({1}, 7.0f));
  Adam adam(store, 0.9, 0.999, 1e-8);
  const Tensor<float> target({2}, std::vector<float>{0.5f, 0.25f});
  for (int i = 0; i < 3000; ++i) {
    store.zero_grad();
    backward(ops::l1_loss(w, target));
    adam.step(1e-2);
  }
  EXPECT_NEAR(w.value()[0], 0.5f, 0.02);
  EXPECT_NEAR(w.value()[1], 0.25f, 0.02);
  EXPECT_EQ(unused.value()[0], 7.0f);
  EXPECT_EQ(adam.steps(), 3000);
}

TEST(AdamOptimizer, FirstStepIsLrTimesSign) {
  ParamStore<float> store;
  auto w = store.add("w", Tensor<float>({2}, std::vector<float>{1.0f, 1.0f}));
  Adam adam(store, 0.9, 0.999, 1e-12);
  backward(ops::l1_loss(w, Tensor<float>({2}, std::vector<float>{0.0f, 2.0f})));
  adam.step(0.1);
  EXPECT_NEAR(w.value()[0], 0.9f, 1e-6);
  EXPECT_NEAR(w.value()[1], 1.1f, 1e-6);
}

TEST(Dataset, CentredRoiAndSampleSizes) {
  TrainConfig t;
  t.context_patch = 54;
  t.roi_patch = 48;
  EXPECT_EQ(centered_roi(t), (RoiBox{3, 3, 48, 48}));
  Dataset d;
  SynthOptions opt{240, 240, 80, 1};
  auto rng = make_rng(1, "x");
  d.add("a", synth_image(opt, rng), 4);
  auto r1 = make_rng(5, "data"), r2 = make_rng(5, "data");
  const TrainSample s1 = sample_training_pair(d, t, 4, r1);
  const TrainSample s2 = sample_training_pair(d, t, 4, r2);
  EXPECT_EQ(s1.hr_context.height(), 216);
  EXPECT_EQ(s1.context.height(), 54);
  EXPECT_EQ(s1.hr_roi.height(), 192);
  EXPECT_EQ(s1.context, s2.context);
  EXPECT_EQ(s1.hr_roi, crop(s1.hr_context, s1.box.scaled(4)));
}

TEST(Dataset, AddCropsToScaleMultiple) {
  Dataset d;
  d.add("odd", Image::chw(3, 30, 27, 0.4f), 4);
  EXPECT_EQ(d.pairs[0].hr.height(), 28);
  EXPECT_EQ(d.pairs[0].hr.width(), 24);
  EXPECT_EQ(d.pairs[0].lr.height(), 7);
  EXPECT_EQ(d.pairs[0].lr.width(), 6);
}

TEST(Dataset, ManifestRoundTrip) {
  const fs::path dir = scratch("manifest");
  const auto entries = write_synthetic_set(dir, 2, SynthOptions{64, 64, 32, 1}, 2, 3, "test");
  ASSERT_EQ(entries.size(), 2u);
  const auto loaded = load_manifest(dir / "manifest.json");
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].scale, 2);
  const Dataset d = Dataset::from_manifest(dir / "manifest.json");
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.pairs[1].lr.height(), 32);
  EXPECT_THROW(load_manifest(dir / "missing.json"), Error);
  fs::remove_all(dir);
}

TEST(Dataset, SynthIsSeededAndInRange) {
  SynthOptions opt{96, 96, 48, 2};
  auto a = make_rng(4, "s"), b = make_rng(4, "s"), c = make_rng(5, "s");
  const Image x = synth_image(opt, a);
  EXPECT_EQ(x, synth_image(opt, b));
  EXPECT_NE(x, synth_image(opt, c));
  for (float v : x.storage()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(TrainLoop, DeterministicAcrossRuns) {
  const Dataset data = tiny_dataset(1);
  TrainConfig t = tiny_train();
  t.iters = 4;
  std::map<std::string, Tensor<float>> finals[2];
  for (int run = 0; run < 2; ++run) {
    ClsrModel<float> m(testing::toy_config(), 3);
    TrainOptions opt;
    opt.out_dir = scratch("det" + std::to_string(run));
    train_loop(m, data, nullptr, t, 3, opt);
    finals[run] = m.params().export_float();
    fs::remove_all(opt.out_dir);
  }
  for (const auto& [k, v] : finals[0]) EXPECT_EQ(v, finals[1].at(k)) << k << " " << max_abs_diff(v, finals[1].at(k));
}

TEST(TrainLoop, InitialLossIsBilinearLoss) {
  const Dataset data = tiny_dataset(2);
  TrainConfig t = tiny_train();
  t.iters = 1;
  t.batch_size = 1;
  t.lambda_start = 0;
  ClsrModel<float> m(testing::toy_config(), 4);
  TrainOptions opt;
  opt.out_dir = scratch("initloss");
  double logged = -1;
  opt.on_log = [&](const nlohmann::json& rec) { logged = rec.at("loss_roi").get<double>(); };
  train_loop(m, data, nullptr, t, 4, opt);
  // Replay the sample the loop drew and score plain bilinear on it.
  auto rng = make_rng(4, "data");
  const TrainSample s = sample_training_pair(data, t, 2, rng);
  const Image bi = resize_bilinear(crop(s.context, s.box), 16, 16);
  double l1 = 0;
  for (std::size_t i = 0; i < bi.size(); ++i) l1 += std::abs(bi[i] - s.hr_roi[i]);
  l1 /= static_cast<double>(bi.size());
  // The fresh network's reflected window equals plain bilinear of the crop
  // only in the interior, so allow a small difference.
  EXPECT_NEAR(logged, l1, 0.1 * l1);
  fs::remove_all(opt.out_dir);
}

TEST(TrainLoop, WritesArtifactsAndResumesExactly) {
  const Dataset data = tiny_dataset(3, 2);
  const TrainConfig t = tiny_train();
  const fs::path full = scratch("full");
  ClsrModel<float> a(testing::toy_config(), 5);
  TrainOptions oa;
  oa.out_dir = full;
  const TrainResult ra = train_loop(a, data, &data, t, 5, oa);
  EXPECT_TRUE(fs::exists(full / "metrics.jsonl"));
  EXPECT_TRUE(fs::exists(full / "ckpt_000003.clsrw"));
  EXPECT_TRUE(fs::exists(full / "ckpt_000003.opt"));
  EXPECT_TRUE(fs::exists(ra.final_weights));
  std::ifstream log(full / "metrics.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    const auto rec = nlohmann::json::parse(line);
    EXPECT_TRUE(rec.contains("lambda"));
    ++lines;
  }
  EXPECT_EQ(lines, t.iters);

  const fs::path resumed = scratch("resumed");
  fs::copy(full / "ckpt_000003.clsrw", resumed / "ckpt_000003.clsrw");
  fs::copy(full / "ckpt_000003.opt", resumed / "ckpt_000003.opt");
  ClsrModel<float> b(testing::toy_config(), 99);
  TrainOptions ob;
  ob.out_dir = resumed;
  ob.resume = resumed / "ckpt_000003";
  train_loop(b, data, &data, t, 5, ob);
  EXPECT_EQ(a.params().export_float(), b.params().export_float());
  fs::remove_all(full);
  fs::remove_all(resumed);
}

TEST(TrainLoop, NonFiniteLossDumpsAndThrows) {
  Dataset data = tiny_dataset(4);
  for (auto& v : data.pairs[0].hr.storage()) v = std::numeric_limits<float>::quiet_NaN();
  TrainConfig t = tiny_train();
  ClsrModel<float> m(testing::toy_config(), 6);
  TrainOptions opt;
  opt.out_dir = scratch("nan");
  EXPECT_THROW(train_loop(m, data, nullptr, t, 6, opt), NumericError);
  EXPECT_TRUE(fs::exists(opt.out_dir / "nan_dump.json"));
  fs::remove_all(opt.out_dir);
}

TEST(Gradients, EveryParameterReached) {
  ModelConfig cfg = testing::toy_config();
  ClsrModel<double> m(cfg, 7);
  std::mt19937_64 data(7);
  testing::randomize_params(m.params(), data, 0.3);
  const Tensor<double> ctx = testing::random_tensor<double>({3, 24, 24}, data);
  const Tensor<double> y = testing::random_tensor<double>({3, 16, 16}, data);
  const Tensor<double> yc = testing::random_tensor<double>({3, 48, 48}, data);
  m.set_training(true);
  const auto state = m.prepare_context(Var<double>::constant(ctx), true);
  const auto pred = m.forward_roi(state, {8, 8, 8, 8}, 2);
  backward(clsr_loss<double>(pred, y, state.pim.sr_context, &yc, 0.5));
  const auto& names = m.params().ordered_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& v = m.params().vars()[i];
    ASSERT_TRUE(v.has_grad()) << names[i];
    double norm = 0;
    for (double g : v.grad().storage()) norm += g * g;
    // The per-head offset shifts every logit of a row equally, which the
    // softmax cancels, so its gradient is zero up to rounding.
    if (names[i] == "gcm.attn.alpha") {
      EXPECT_LT(norm, 1e-20);
    } else {
      EXPECT_GT(norm, 0.0) << names[i];
    }
  }
}

TEST(Gradients, PimHeadOnlyThroughContextTerm) {
  ModelConfig cfg = testing::toy_config();
  ClsrModel<double> m(cfg, 8);
  std::mt19937_64 data(8);
  testing::randomize_params(m.params(), data, 0.3);
  const Tensor<double> ctx = testing::random_tensor<double>({3, 24, 24}, data);
  const Tensor<double> y = testing::random_tensor<double>({3, 16, 16}, data);
  const Tensor<double> yc = testing::random_tensor<double>({3, 48, 48}, data);
  m.set_training(true);
  const auto state = m.prepare_context(Var<double>::constant(ctx), true);
  backward(clsr_loss<double>(m.forward_roi(state, {8, 8, 8, 8}, 2), y, state.pim.sr_context, &yc, 0.0));
  EXPECT_FALSE(m.params().get("pim.tail.weight").has_grad());
  EXPECT_TRUE(m.params().get("pim.shallow.weight").has_grad());
}

}  // namespace
}  // namespace clsr
