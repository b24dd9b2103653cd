#include <gtest/gtest.h>

#include <functional>

#include "clsr/flop_counter.hpp"
#include "clsr/ops.hpp"
#include "test_support.hpp"

namespace clsr {
namespace {

using VarD = Var<double>;
using TensorD = Tensor<double>;

// Loss = mean |f(inputs) - target| with target offset from the output by
// random amounts of either sign, so the weights are non-uniform and far
// from the kinks.
void check_gradients(std::vector<VarD> inputs, const std::function<VarD(const std::vector<VarD>&)>& f,
                     std::uint64_t seed, double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  const VarD probe = f(inputs);
  TensorD target = probe.value();
  std::uniform_real_distribution<double> u(0.05, 0.5);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : target.storage()) v += sign(rng) ? u(rng) : -u(rng);

  auto loss = [&] { return ops::l1_loss(f(inputs), target).value()[0]; };
  for (auto& in : inputs) in.zero_grad();
  backward(ops::l1_loss(f(inputs), target));
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    ASSERT_TRUE(inputs[k].has_grad()) << "input " << k;
    const TensorD analytic = inputs[k].grad();
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double fd = testing::central_difference(inputs[k], i, 1e-5, loss);
      EXPECT_NEAR(analytic[i], fd, tol) << "input " << k << " element " << i;
    }
  }
}

VarD param(Shape s, std::mt19937_64& rng) {
  return VarD::parameter(testing::random_tensor<double>(std::move(s), rng, -1, 1));
}

TEST(Conv2d, ZeroInputZeroOutput) {
  std::mt19937_64 rng(1);
  const VarD x = VarD::constant(TensorD({3, 5, 5}));
  const VarD w = param({4, 3, 3, 3}, rng);
  const VarD b = VarD::constant(TensorD({4}));
  const TensorD y = ops::conv2d(x, w, b, 1, 1).value();
  for (double v : y.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, OnePixelShape) {
  std::mt19937_64 rng(2);
  const VarD x = param({3, 1, 1}, rng);
  const VarD out = ops::conv2d(x, param({6, 3, 3, 3}, rng), param({6}, rng), 1, 1);
  EXPECT_EQ(out.shape(), (Shape{6, 1, 1}));
}

TEST(Conv2d, OnesKernelOnConstantInterior) {
  const VarD x = VarD::constant(TensorD({2, 6, 6}, 0.5));
  const VarD w = VarD::constant(TensorD({1, 2, 3, 3}, 1.0));
  const VarD out = ops::conv2d(x, w, VarD(), 1, 1);
  // Interior: 9 taps x 2 channels x 0.5.
  for (int y = 1; y < 5; ++y)
    for (int xx = 1; xx < 5; ++xx) EXPECT_DOUBLE_EQ(out.value().at(0, y, xx), 9.0);
  EXPECT_DOUBLE_EQ(out.value().at(0, 0, 0), 4.0);
}

TEST(Conv2d, StridedMatchesNaive) {
  std::mt19937_64 rng(3);
  const TensorD x = testing::random_tensor<double>({3, 8, 6}, rng, -1, 1);
  const TensorD w = testing::random_tensor<double>({2, 3, 4, 4}, rng, -1, 1);
  const TensorD b = testing::random_tensor<double>({2}, rng, -1, 1);
  const int stride = 2, pad = 1;
  const VarD out = ops::conv2d(VarD::constant(x), VarD::constant(w), VarD::constant(b), stride, pad);
  const int oh = (8 + 2 * pad - 4) / stride + 1, ow = (6 + 2 * pad - 4) / stride + 1;
  ASSERT_EQ(out.shape(), (Shape{2, oh, ow}));
  for (int o = 0; o < 2; ++o)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int c = 0; c < 3; ++c)
          for (int ky = 0; ky < 4; ++ky)
            for (int kx = 0; kx < 4; ++kx) {
              const int iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
              if (iy < 0 || iy >= 8 || ix < 0 || ix >= 6) continue;
              acc += w[((static_cast<std::size_t>(o) * 3 + c) * 4 + ky) * 4 + kx] * x.at(c, iy, ix);
            }
        EXPECT_NEAR(out.value().at(o, y, xx), acc, 1e-12);
      }
}

TEST(ConvTranspose2d, MatchesScatterDefinition) {
  std::mt19937_64 rng(4);
  const TensorD x = testing::random_tensor<double>({2, 3, 4}, rng, -1, 1);
  const TensorD w = testing::random_tensor<double>({2, 3, 4, 4}, rng, -1, 1);
  const int stride = 2, pad = 1, k = 4;
  const VarD out = ops::conv_transpose2d(VarD::constant(x), VarD::constant(w), VarD(), stride, pad);
  const int oh = (3 - 1) * stride - 2 * pad + k, ow = (4 - 1) * stride - 2 * pad + k;
  ASSERT_EQ(out.shape(), (Shape{3, oh, ow}));
  TensorD ref({3, oh, ow});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 3; ++y)
      for (int xx = 0; xx < 4; ++xx)
        for (int o = 0; o < 3; ++o)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int oy = y * stride - pad + ky, ox = xx * stride - pad + kx;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
              ref.at(o, oy, ox) += x.at(c, y, xx) * w[((static_cast<std::size_t>(c) * 3 + o) * k + ky) * k + kx];
            }
  EXPECT_LT(max_abs_diff(out.value(), ref), 1e-12);
}

TEST(PixelShuffle, ChannelBlocksToSpatial) {
  TensorD x({4, 1, 1});
  x.storage() = {1, 2, 3, 4};
  const VarD out = ops::pixel_shuffle(VarD::constant(x), 2);
  ASSERT_EQ(out.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(out.value().storage(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(5);
  const VarD x = VarD::constant(testing::random_tensor<double>({7, 13}, rng, -20, 20));
  const TensorD a = ops::softmax_rows(x).value();
  for (int i = 0; i < 7; ++i) {
    double s = 0;
    for (int j = 0; j < 13; ++j) s += a[static_cast<std::size_t>(i) * 13 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Gradients, Conv2d) {
  std::mt19937_64 rng(10);
  check_gradients({param({2, 5, 4}, rng), param({3, 2, 3, 3}, rng), param({3}, rng)},
                  [](const auto& v) { return ops::conv2d(v[0], v[1], v[2], 1, 1); }, 10);
  check_gradients({param({2, 6, 6}, rng), param({2, 2, 4, 4}, rng), param({2}, rng)},
                  [](const auto& v) { return ops::conv2d(v[0], v[1], v[2], 2, 1); }, 11);
}

TEST(Gradients, ConvTranspose2d) {
  std::mt19937_64 rng(12);
  check_gradients({param({2, 3, 3}, rng), param({2, 3, 4, 4}, rng), param({3}, rng)},
                  [](const auto& v) { return ops::conv_transpose2d(v[0], v[1], v[2], 2, 1); }, 12);
  check_gradients({param({2, 2, 3}, rng), param({2, 2, 3, 3}, rng), param({2}, rng)},
                  [](const auto& v) { return ops::conv_transpose2d(v[0], v[1], v[2], 3, 0); }, 13);
}

TEST(Gradients, ShapeOps) {
  std::mt19937_64 rng(14);
  check_gradients({param({8, 2, 3}, rng)}, [](const auto& v) { return ops::pixel_shuffle(v[0], 2); }, 14);
  check_gradients({param({2, 5, 6}, rng)},
                  [](const auto& v) { return ops::resize_bilinear(v[0], 9, 4); }, 15);
  check_gradients({param({2, 4, 5}, rng)},
                  [](const auto& v) { return ops::reflect_window(v[0], RoiBox{-2, -3, 8, 9}); }, 16);
  check_gradients({param({3, 4, 4}, rng), param({1, 4, 4}, rng)},
                  [](const auto& v) { return ops::add_leading_channels(v[0], v[1]); }, 17);
  check_gradients({param({3, 2, 4}, rng)},
                  [](const auto& v) { return ops::from_tokens(ops::to_tokens(v[0]), 4, 2); }, 18);
  check_gradients({param({2, 3}, rng), param({4, 3}, rng)},
                  [](const auto& v) {
                    const VarD a = ops::concat_rows<double>({v[0], v[1]});
                    const VarD b = ops::concat_rows<double>({v[1], v[0]});
                    return ops::slice_cols(ops::concat_cols<double>({a, b}), 1, 4);
                  },
                  19);
}

TEST(Gradients, ConcatColsRowMismatchThrows) {
  std::mt19937_64 rng(20);
  EXPECT_THROW(ops::concat_cols<double>({param({2, 3}, rng), param({3, 3}, rng)}), ShapeError);
}

TEST(Gradients, MatmulSoftmaxLogits) {
  std::mt19937_64 rng(21);
  check_gradients({param({3, 4}, rng), param({4, 5}, rng)},
                  [](const auto& v) { return ops::matmul(v[0], v[1]); }, 21);
  check_gradients({param({3, 4}, rng), param({5, 4}, rng)},
                  [](const auto& v) { return ops::matmul_nt(v[0], v[1]); }, 22);
  check_gradients({param({4, 6}, rng)}, [](const auto& v) { return ops::softmax_rows(v[0]); }, 23);
  const TensorD dist = testing::random_tensor<double>({3, 5}, rng);
  check_gradients({param({3, 5}, rng), param({2}, rng), param({2}, rng), param({1}, rng)},
                  [dist](const auto& v) {
                    return ops::softmax_rows(ops::attention_logits(v[0], v[1], v[2], v[3], 1, dist, 0.5));
                  },
                  24);
}

TEST(Gradients, ReluAndScale) {
  std::mt19937_64 rng(25);
  check_gradients({param({2, 4, 4}, rng)},
                  [](const auto& v) { return ops::scale(ops::relu(v[0]), 1.7); }, 25);
}

TEST(Gradients, SharedSubgraphAccumulates) {
  std::mt19937_64 rng(26);
  check_gradients({param({2, 3, 3}, rng), param({2, 2, 3, 3}, rng)},
                  [](const auto& v) {
                    const VarD h = ops::conv2d(v[0], v[1], VarD(), 1, 1);
                    return ops::add(h, ops::conv2d(ops::relu(h), v[1], VarD(), 1, 1));
                  },
                  26);
}

TEST(FlopCounting, ConvMatchesFormula) {
  std::mt19937_64 rng(27);
  const VarD x = VarD::constant(TensorD({1, 8, 8}, 1.0));
  const VarD w = VarD::constant(TensorD({1, 1, 3, 3}, 1.0));
  FlopScope scope;
  (void)ops::conv2d(x, w, VarD(), 1, 1);
  EXPECT_EQ(scope.flops(), 1152u);
}

TEST(FlopCounting, NestedScopesEachSeeTheirWork) {
  const VarD x = VarD::constant(TensorD({1, 8, 8}, 1.0));
  const VarD w = VarD::constant(TensorD({1, 1, 3, 3}, 1.0));
  FlopScope outer;
  (void)ops::conv2d(x, w, VarD(), 1, 1);
  {
    FlopScope inner;
    (void)ops::resize_bilinear(x, 4, 4);
    EXPECT_EQ(inner.flops(), 8u * 16u);
  }
  EXPECT_EQ(outer.flops(), 1152u + 128u);
}

TEST(Autograd, ConstantsGetNoGraph) {
  const VarD a = VarD::constant(TensorD({2, 2}, 1.0));
  const VarD out = ops::matmul(a, a);
  EXPECT_FALSE(out.requires_grad());
  EXPECT_TRUE(out.node()->parents.empty());
}

}  // namespace
}  // namespace clsr
