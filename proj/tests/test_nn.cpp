#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "collagan/model.hpp"
#include "collagan/nn.hpp"

using namespace collagan;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Central differences of <probe, f(x)> w.r.t. selected entries of x.
void expect_input_gradient(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                           const Tensor<double>& probe, const Tensor<double>& analytic, Rng& rng, int checks = 12) {
  const double h = 1e-6;
  for (int c = 0; c < checks; ++c) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(x.size()) - 1));
    Tensor<double> xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    const double numeric = (dot(probe, f(xp)) - dot(probe, f(xm))) / (2 * h);
    EXPECT_NEAR(analytic[k], numeric, 1e-6 * std::max(1.0, std::abs(numeric))) << "index " << k;
  }
}

}  // namespace

TEST(Im2Col, Col2ImIsAdjoint) {
  Rng rng(1);
  const nn::ConvGeometry g{3, 7, 6, 4, 2, 1, 3, 3};
  auto img = random_tensor({3, 7, 6}, rng);
  auto col = random_tensor({g.rows(), g.cols()}, rng);
  std::vector<double> unfolded(col.size()), folded(img.size());
  nn::im2col(img.data(), g, unfolded.data());
  nn::col2im(col.data(), g, folded.data());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < col.size(); ++i) lhs += unfolded[i] * col[i];
  for (std::size_t i = 0; i < img.size(); ++i) rhs += img[i] * folded[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(2);
  nn::Conv2d<double> conv("c", 2, 3, 4, 2, 1);
  conv.reset(rng);
  for (auto& b : conv.bias().value.values()) b = rng.normal();
  auto x = random_tensor({2, 2, 8, 8}, rng);
  auto y = conv.forward(x);
  ASSERT_EQ(y.shape(), (std::vector<int>{2, 3, 4, 4}));
  for (int n = 0; n < 2; ++n) {
    for (int o = 0; o < 3; ++o) {
      for (int oy = 0; oy < 4; ++oy) {
        for (int ox = 0; ox < 4; ++ox) {
          double s = conv.bias().value[o];
          for (int c = 0; c < 2; ++c) {
            for (int ky = 0; ky < 4; ++ky) {
              for (int kx = 0; kx < 4; ++kx) {
                const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= 8 || ix < 0 || ix >= 8) continue;
                s += conv.weight().value.at(o, c, ky, kx) * x.at(n, c, iy, ix);
              }
            }
          }
          EXPECT_NEAR(y.at(n, o, oy, ox), s, 1e-12);
        }
      }
    }
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  nn::Conv2d<double> conv("c", 3, 4, 4, 2, 1);
  conv.reset(rng);
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto probe = random_tensor({2, 4, 4, 4}, rng);
  conv.forward(x);
  auto dx = conv.backward(probe);
  expect_input_gradient([&](const Tensor<double>& in) { return conv.forward(in); }, x, probe, dx, rng);

  // weight gradient
  conv.weight().grad.zero();
  conv.forward(x);
  conv.backward(probe);
  const auto analytic = conv.weight().grad;
  for (int c = 0; c < 8; ++c) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(analytic.size()) - 1));
    const double w0 = conv.weight().value[k], h = 1e-6;
    conv.weight().value[k] = w0 + h;
    const double fp = dot(probe, conv.forward(x));
    conv.weight().value[k] = w0 - h;
    const double fm = dot(probe, conv.forward(x));
    conv.weight().value[k] = w0;
    EXPECT_NEAR(analytic[k], (fp - fm) / (2 * h), 1e-6);
  }
}

TEST(ConvTranspose2d, DoublesSideAndGradientsMatch) {
  Rng rng(4);
  nn::ConvTranspose2d<double> deconv("d", 4, 2, 4, 2, 1);
  deconv.reset(rng);
  auto x = random_tensor({2, 4, 3, 3}, rng);
  auto y = deconv.forward(x);
  ASSERT_EQ(y.shape(), (std::vector<int>{2, 2, 6, 6}));
  auto probe = random_tensor(y.shape(), rng);
  auto dx = deconv.backward(probe);
  expect_input_gradient([&](const Tensor<double>& in) { return deconv.forward(in); }, x, probe, dx, rng);
}

TEST(ConvTranspose2d, IsAdjointOfConv2dWithSharedWeights) {
  Rng rng(5);
  nn::Conv2d<double> conv("c", 2, 3, 4, 2, 1);
  nn::ConvTranspose2d<double> deconv("d", 3, 2, 4, 2, 1);
  conv.reset(rng);
  std::vector<nn::Parameter<double>*> cp, dp;
  conv.parameters(cp);
  deconv.parameters(dp);
  // Conv weight (out=3, in=2, k, k) has the same layout as deconv weight (in=3, out=2, k, k).
  dp[0]->value = cp[0]->value;
  auto x = random_tensor({1, 2, 8, 8}, rng);
  auto z = random_tensor({1, 3, 4, 4}, rng);
  EXPECT_NEAR(dot(conv.forward(x), z), dot(x, deconv.forward(z)), 1e-10);
}

TEST(BatchNorm2d, TrainingGradientMatchesFiniteDifferences) {
  Rng rng(6);
  nn::BatchNorm2d<double> bn("bn", 3);
  bn.reset(rng);
  auto x = random_tensor({4, 3, 2, 2}, rng, 2.0);
  auto probe = random_tensor(x.shape(), rng);
  bn.forward(x);
  auto dx = bn.backward(probe);
  expect_input_gradient([&](const Tensor<double>& in) { return bn.forward(in); }, x, probe, dx, rng, 20);
}

TEST(BatchNorm2d, EvalModeUsesRunningStatistics) {
  nn::BatchNorm2d<double> bn("bn", 1, /*momentum=*/1.0);
  Tensor<double> x({2, 1, 1, 2});
  x.values() = {1, 2, 3, 4};
  bn.forward(x);  // running mean 2.5, unbiased var 5/3
  bn.set_training(false);
  auto y = bn.forward(x);
  EXPECT_NEAR(y[0], (1 - 2.5) / std::sqrt(5.0 / 3.0 + 1e-5), 1e-12);
}

TEST(Activations, RangesAreOpen) {
  Tensor<float> x({1, 1, 1, 4});
  x.values() = {-100.f, -20.f, 20.f, 100.f};
  nn::Tanh<float> tanh;
  const auto t = tanh.forward(x);
  for (float v : t.values()) {
    EXPECT_GT(v, -1.0f);
    EXPECT_LT(v, 1.0f);
  }
  nn::Sigmoid<float> sig;
  const auto p = sig.forward(x);
  for (float v : p.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Tensor, ChannelSliceAndConcatRoundTrip) {
  Rng rng(7);
  Tensor<float> a(2, 3, 4, 4), b(2, 5, 4, 4);
  for (auto& v : a.values()) v = static_cast<float>(rng.normal());
  for (auto& v : b.values()) v = static_cast<float>(rng.normal());
  auto ab = concat_channels(a, b);
  EXPECT_EQ(slice_channels(ab, 0, 3), a);
  EXPECT_EQ(slice_channels(ab, 3, 5), b);
}
