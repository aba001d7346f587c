#include "uvs/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "uvs/grad_check.hpp"
#include "uvs/rng.hpp"

using uvs::AdamState;
using uvs::ConvSpec;
using uvs::grad_check;
using uvs::NamedParam;
using uvs::Rng;
using uvs::Shape;
using uvs::Tensor;

namespace {

Tensor<double> randt(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(uvs::shape_numel(shape));
  for (auto& x : v) x = rng.uniform() * 2.0 - 1.0;
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST(Conv2d, OneByOneIdentityKernel) {
  Rng rng(3);
  auto x = randt({2, 3, 5, 5}, rng);
  // identity 1x1 kernel: w[o][i] = (o == i)
  std::vector<double> w(3 * 3, 0.0);
  for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  auto weights = Tensor<double>::from({3, 3, 1, 1}, std::move(w));
  auto bias = Tensor<double>::zeros({3});
  ConvSpec spec{3, 3, 1, 1, 0, 2};
  auto y = uvs::conv(x, spec, weights, bias);
  EXPECT_EQ(y.shape(), x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, AllOnesHandComputed) {
  // 4x4 ones, 3x3 ones kernel, stride 1, pad 1: centers 9, corners 4.
  auto x = Tensor<double>::full({1, 1, 4, 4}, 1.0);
  auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto b = Tensor<double>::zeros({1});
  auto y = uvs::conv(x, ConvSpec{1, 1, 3, 1, 1, 2}, w, b);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_DOUBLE_EQ(y[0], 4.0);          // corner
  EXPECT_DOUBLE_EQ(y[3], 4.0);          // corner
  EXPECT_DOUBLE_EQ(y[1 * 4 + 1], 9.0);  // center
  EXPECT_DOUBLE_EQ(y[2 * 4 + 2], 9.0);  // center
  EXPECT_DOUBLE_EQ(y[0 * 4 + 1], 6.0);  // edge
}

TEST(Conv2d, StridedPyramidSizes) {
  // five stride-2 3x3 pad-1 layers on 64x64: 32,16,8,4,2
  Rng rng(5);
  auto x = randt({1, 1, 64, 64}, rng);
  std::vector<int64_t> expect{32, 16, 8, 4, 2};
  for (int64_t s : expect) {
    auto w = uvs::init_conv_weights<double>(ConvSpec{1, 1, 3, 2, 1, 2}, 7);
    auto b = Tensor<double>::zeros({1});
    x = uvs::conv(x, ConvSpec{1, 1, 3, 2, 1, 2}, w, b);
    EXPECT_EQ(x.shape()[2], s);
    EXPECT_EQ(x.shape()[3], s);
  }
}

TEST(Conv2d, ChannelMismatchThrows) {
  auto x = Tensor<double>::zeros({1, 2, 4, 4});
  auto w = Tensor<double>::zeros({1, 3, 3, 3});
  auto b = Tensor<double>::zeros({1});
  EXPECT_THROW(uvs::conv(x, ConvSpec{3, 1, 3, 1, 1, 2}, w, b), uvs::ShapeError);
}

TEST(Conv2d, GradCheckInputWeightsBias) {
  for (uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    auto x = randt({2, 2, 5, 5}, rng, true);
    auto w = randt({3, 2, 3, 3}, rng, true);
    auto b = randt({3}, rng, true);
    ConvSpec spec{2, 3, 3, 2, 1, 2};
    auto f_x = [&](Tensor<double> t) { return uvs::sum(uvs::conv(t, spec, w, b)); };
    auto f_w = [&](Tensor<double> t) { return uvs::sum(uvs::conv(x, spec, t, b)); };
    auto f_b = [&](Tensor<double> t) { return uvs::sum(uvs::conv(x, spec, w, t)); };
    EXPECT_TRUE(grad_check(f_x, x, 1e-5, 1e-4).pass) << "input, seed " << seed;
    EXPECT_TRUE(grad_check(f_w, w, 1e-5, 1e-4).pass) << "weights, seed " << seed;
    EXPECT_TRUE(grad_check(f_b, b, 1e-5, 1e-4).pass) << "bias, seed " << seed;
  }
}

TEST(Conv2d, GradCheckNonlinearObjective) {
  Rng rng(17);
  auto x = randt({1, 2, 4, 4}, rng, true);
  auto w = randt({2, 2, 3, 3}, rng, true);
  auto b = randt({2}, rng, true);
  ConvSpec spec{2, 2, 3, 1, 1, 2};
  auto f = [&](Tensor<double> t) {
    auto y = uvs::conv(t, spec, w, b);
    return uvs::mean(uvs::mul(uvs::sigmoid(y), uvs::sigmoid(y)));
  };
  auto rep = grad_check(f, x, 1e-5, 1e-4);
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
}

TEST(Conv3d, GradCheckAll) {
  for (uint64_t seed : {4u, 5u, 6u}) {
    Rng rng(seed);
    auto x = randt({1, 2, 4, 4, 4}, rng, true);
    auto w = randt({2, 2, 3, 3, 3}, rng, true);
    auto b = randt({2}, rng, true);
    ConvSpec spec{2, 2, 3, 1, 1, 3};
    auto f_x = [&](Tensor<double> t) { return uvs::sum(uvs::conv(t, spec, w, b)); };
    auto f_w = [&](Tensor<double> t) { return uvs::sum(uvs::conv(x, spec, t, b)); };
    auto f_b = [&](Tensor<double> t) { return uvs::sum(uvs::conv(x, spec, w, t)); };
    EXPECT_TRUE(grad_check(f_x, x, 1e-5, 1e-4).pass) << "input, seed " << seed;
    EXPECT_TRUE(grad_check(f_w, w, 1e-5, 1e-4).pass) << "weights, seed " << seed;
    EXPECT_TRUE(grad_check(f_b, b, 1e-5, 1e-4).pass) << "bias, seed " << seed;
  }
}

TEST(Conv3d, StridedOutputShape) {
  Rng rng(8);
  auto x = randt({1, 3, 8, 8, 8}, rng);
  auto w = randt({4, 3, 3, 3, 3}, rng);
  auto b = Tensor<double>::zeros({4});
  auto y = uvs::conv(x, ConvSpec{3, 4, 3, 2, 1, 3}, w, b);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4, 4, 4}));
}

TEST(Conv, LinearityInInputWithZeroBias) {
  Rng rng(9);
  auto x = randt({1, 2, 6, 6}, rng);
  auto w = randt({3, 2, 3, 3}, rng);
  auto b = Tensor<double>::zeros({3});
  ConvSpec spec{2, 3, 3, 1, 1, 2};
  auto y1 = uvs::conv(x, spec, w, b);
  auto y2 = uvs::conv(uvs::mul(x, 2.5), spec, w, b);
  for (int64_t i = 0; i < y1.numel(); ++i) EXPECT_NEAR(y2[i], 2.5 * y1[i], 1e-12);
}

TEST(Upsample2x, BlockReplication) {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = uvs::upsample2x(x);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(y.values(), expect);
}

TEST(Upsample2x, SumQuadruples2D) {
  Rng rng(10);
  auto x = randt({2, 3, 4, 4}, rng);
  EXPECT_NEAR(uvs::sum(uvs::upsample2x(x)).item(), 4.0 * uvs::sum(x).item(), 1e-9);
}

TEST(Upsample2x, GradientIsAllFours) {
  Rng rng(11);
  auto x = randt({1, 2, 3, 3}, rng, true);
  auto g = uvs::backward(uvs::sum(uvs::upsample2x(x))).at(x);
  for (int64_t i = 0; i < g.numel(); ++i) EXPECT_DOUBLE_EQ(g[i], 4.0);
}

TEST(Upsample2x, Volume3D) {
  Rng rng(12);
  auto x = randt({1, 2, 2, 2, 2}, rng, true);
  auto y = uvs::upsample2x(x);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 4, 4, 4}));
  auto g = uvs::backward(uvs::sum(y)).at(x);
  for (int64_t i = 0; i < g.numel(); ++i) EXPECT_DOUBLE_EQ(g[i], 8.0);
}

TEST(BoxFilter, WindowMeanAndGradCheck) {
  auto x = Tensor<double>::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}, true);
  auto y = uvs::box_filter2d(x, 3);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 5.0);
  Rng rng(13);
  auto z = randt({1, 2, 6, 6}, rng, true);
  auto f = [](Tensor<double> t) {
    auto m = uvs::box_filter2d(t, 3);
    return uvs::mean(uvs::mul(m, m));
  };
  EXPECT_TRUE(grad_check(f, z, 1e-5, 1e-4).pass);
}

TEST(Adam, ZeroGradLeavesParamsAndIncrementsStep) {
  std::vector<NamedParam<double>> params{{"p", Tensor<double>::from({2}, {1.0, -2.0}, true)}};
  AdamState<double> st;
  uvs::GradientMap<double> grads;  // empty -> zero grads
  uvs::adam_step(params, grads, st, 0.1);
  EXPECT_EQ(st.t, 1);
  EXPECT_EQ(params[0].value.values(), (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepClosedForm) {
  // t=1, g=1, lr=0.1: m_hat=1, v_hat=1, delta = -0.1/(1+1e-8)
  auto p = Tensor<double>::scalar(0.0, true);
  std::vector<NamedParam<double>> params{{"p", p}};
  AdamState<double> st;
  uvs::GradientMap<double> grads;
  grads.insert(p.id(), Tensor<double>::scalar(1.0));
  uvs::adam_step(params, grads, st, 0.1);
  EXPECT_NEAR(params[0].value.item(), -0.1 / (1.0 + 1e-8), 1e-12);
}

TEST(Adam, BitwiseDeterministic) {
  auto run = [](std::vector<double>& out) {
    Rng rng(77);
    auto p = Tensor<double>::from({8}, std::vector<double>(8, 0.5), true);
    std::vector<NamedParam<double>> params{{"p", p}};
    AdamState<double> st;
    for (int step = 0; step < 25; ++step) {
      std::vector<double> gv(8);
      for (auto& g : gv) g = rng.normal();
      uvs::GradientMap<double> grads;
      grads.insert(p.id(), Tensor<double>::from({8}, gv));
      uvs::adam_step(params, grads, st, 0.01);
    }
    out = params[0].value.values();
  };
  std::vector<double> a, b;
  run(a);
  run(b);
  EXPECT_EQ(a, b);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  auto p = Tensor<double>::scalar(0.0, true);
  std::vector<NamedParam<double>> params{{"enc.0.w", p}};
  AdamState<double> st;
  uvs::GradientMap<double> grads;
  grads.insert(p.id(), Tensor<double>::scalar(std::nan("")));
  try {
    uvs::adam_step(params, grads, st, 0.1);
    FAIL() << "expected OptimError";
  } catch (const uvs::OptimError& e) {
    EXPECT_NE(std::string(e.what()).find("enc.0.w"), std::string::npos);
  }
}

TEST(Init, DeterministicPerSeed) {
  ConvSpec spec{4, 8, 3, 1, 1, 2};
  auto a = uvs::init_conv_weights<double>(spec, 42);
  auto b = uvs::init_conv_weights<double>(spec, 42);
  auto c = uvs::init_conv_weights<double>(spec, 43);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_NE(a.values(), c.values());
}

TEST(Init, HeVarianceWithinTwentyPercent) {
  // fan_in = 32*3*3 = 288; ~10^4 samples
  ConvSpec spec{32, 36, 3, 1, 1, 2};
  auto w = uvs::init_conv_weights<double>(spec, 11);
  double s2 = 0;
  for (int64_t i = 0; i < w.numel(); ++i) s2 += w[i] * w[i];
  double var = s2 / static_cast<double>(w.numel());
  double expect = 2.0 / 288.0;
  EXPECT_GT(var, expect * 0.8);
  EXPECT_LT(var, expect * 1.2);
}

TEST(Init, BiasIsZero) {
  auto b = uvs::init_bias<double>(16);
  for (int64_t i = 0; i < b.numel(); ++i) EXPECT_EQ(b[i], 0.0);
}

TEST(ConvSpec, OutputSizeFormulaGuard) {
  EXPECT_THROW(uvs::conv_out_size(2, 5, 1, 0), uvs::ShapeError);
  EXPECT_EQ(uvs::conv_out_size(64, 3, 2, 1), 32);
}
