#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "xmodal/gradcheck.hpp"
#include "xmodal/ops.hpp"

using namespace xmodal;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> d(shape_numel(shape));
  for (double& v : d) v = u(rng);
  return Tensor::from_data(std::move(shape), std::move(d), requires_grad);
}

// Direct six-loop cross-correlation, batch of one.
std::vector<double> naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                                 std::size_t stride, std::size_t pad) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out(co * oh * ow);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = b.at(o);
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
              const long ix = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd))
                continue;
              acc += w.at(((o * ci + c) * kh + i) * kw + j) * x.at((c * h + iy) * wd + ix);
            }
        out[(o * oh + y) * ow + xx] = acc;
      }
  return out;
}

std::vector<double> naive_conv3d(const Tensor& x, const Tensor& w, const Tensor& b,
                                 Triple s, Triple p) {
  const std::size_t gi = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t go = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const std::size_t od = (d + 2 * p[0] - kd) / s[0] + 1;
  const std::size_t oh = (h + 2 * p[1] - kh) / s[1] + 1;
  const std::size_t ow = (wd + 2 * p[2] - kw) / s[2] + 1;
  std::vector<double> out(go * od * oh * ow);
  for (std::size_t o = 0; o < go; ++o)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = b.at(o);
          for (std::size_t g = 0; g < gi; ++g)
            for (std::size_t a = 0; a < kd; ++a)
              for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) {
                  const long iz = static_cast<long>(z * s[0] + a) - static_cast<long>(p[0]);
                  const long iy = static_cast<long>(y * s[1] + i) - static_cast<long>(p[1]);
                  const long ix = static_cast<long>(xx * s[2] + j) - static_cast<long>(p[2]);
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<long>(d) ||
                      iy >= static_cast<long>(h) || ix >= static_cast<long>(wd))
                    continue;
                  acc += w.at((((o * gi + g) * kd + a) * kh + i) * kw + j) *
                         x.at(((g * d + iz) * h + iy) * wd + ix);
                }
          out[((o * od + z) * oh + y) * ow + xx] = acc;
        }
  return out;
}

}  // namespace

TEST(Conv2d, UnitKernelIsIdentity) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({3, 5, 4}, rng);
  std::vector<double> w(9, 0.0);
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  Tensor y = conv2d(x, Tensor::from_data({3, 3, 1, 1}, w), Tensor::zeros({3}), 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Conv2d, ZeroInputYieldsBias) {
  std::mt19937_64 rng(2);
  Tensor w = random_tensor({2, 3, 3, 3}, rng);
  Tensor b = Tensor::from_data({2}, {0.25, -1.5});
  Tensor y = conv2d(Tensor::zeros({3, 4, 4}), w, b, 1, 1);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.at(i), b.at(i / 16));
}

TEST(Conv2d, OutputShapeFollowsStrideAndPadding) {
  Tensor x = Tensor::zeros({2, 1, 7, 6});
  Tensor w = Tensor::zeros({4, 1, 3, 3});
  EXPECT_EQ(conv2d(x, w, Tensor::zeros({4}), 2, 1).shape(), (Shape{2, 4, 4, 3}));
  EXPECT_EQ(conv2d(x, w, Tensor::zeros({4}), 1, 0).shape(), (Shape{2, 4, 5, 4}));
}

TEST(Conv2d, RejectsBadShapes) {
  EXPECT_THROW(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1}), 1, 1),
               ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({3, 4, 4}), Tensor::zeros({1, 3, 2, 2}), Tensor::zeros({1}), 1, 0),
               ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({3, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({2}), 1, 1),
               ShapeError);
}

TEST(Conv2d, MatchesDirectLoops) {
  std::mt19937_64 rng(3);
  for (std::size_t rep = 0; rep < 20; ++rep) {
    const std::size_t stride = 1 + rep % 2, pad = rep % 3 == 0 ? 0 : 1;
    Tensor x = random_tensor({2, 5 + rep % 3, 4 + rep % 2}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor y = conv2d(x, w, b, stride, pad);
    const auto expect = naive_conv2d(x, w, b, stride, pad);
    ASSERT_EQ(y.numel(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.at(i), expect[i], 1e-12);
  }
}

TEST(Conv2d, FiniteDifferenceGradients) {
  std::mt19937_64 rng(4);
  std::vector<Tensor> in{random_tensor({1, 3, 4, 4}, rng), random_tensor({2, 3, 3, 3}, rng),
                         random_tensor({2}, rng)};
  Tensor probe = random_tensor({1, 2, 4, 4}, rng, false);
  auto fn = [&] {
    Tensor y = conv2d(in[0], in[1], in[2], 1, 1);
    return sum(fully_connected(reshape(y, {32}), reshape(probe, {1, 32}), Tensor::zeros({1})));
  };
  EXPECT_LE(check_gradients(fn, in).max_rel_error, 1e-4);
}

TEST(Conv3d, UnitKernelIsIdentity) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({1, 3, 4, 2}, rng);
  Tensor y = conv3d(x, Tensor::full({1, 1, 1, 1, 1}, 1.0), Tensor::zeros({1}), {1, 1, 1}, {0, 0, 0});
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Conv3d, AveragingKernelPreservesConstantInterior) {
  const double c = 1.75;
  Tensor x = Tensor::full({1, 4, 5, 5}, c);
  Tensor y = conv3d(x, Tensor::full({1, 1, 3, 3, 3}, 1.0 / 27.0), Tensor::zeros({1}), {1, 1, 1},
                    {1, 1, 1});
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t z = 1; z + 1 < 4; ++z)
    for (std::size_t i = 1; i + 1 < 5; ++i)
      for (std::size_t j = 1; j + 1 < 5; ++j) EXPECT_NEAR(y.at((z * 5 + i) * 5 + j), c, 1e-14);
  // A corner sees 8 of the 27 taps.
  EXPECT_NEAR(y.at(0), c * 8.0 / 27.0, 1e-14);
}

TEST(Conv3d, MatchesDirectLoops) {
  std::mt19937_64 rng(6);
  for (std::size_t rep = 0; rep < 20; ++rep) {
    const Triple s{1, 1 + rep % 2, 1 + (rep / 2) % 2};
    Tensor x = random_tensor({2, 3 + rep % 2, 4, 5}, rng);
    Tensor w = random_tensor({2, 2, 3, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor y = conv3d(x, w, b, s, {1, 1, 1});
    const auto expect = naive_conv3d(x, w, b, s, {1, 1, 1});
    ASSERT_EQ(y.numel(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.at(i), expect[i], 1e-12);
  }
}

TEST(Conv3d, FiniteDifferenceGradients) {
  std::mt19937_64 rng(7);
  std::vector<Tensor> in{random_tensor({1, 2, 4, 3, 3}, rng), random_tensor({2, 2, 3, 3, 3}, rng),
                         random_tensor({2}, rng)};
  auto fn = [&] {
    Tensor y = conv3d(in[0], in[1], in[2], {1, 1, 1}, {1, 1, 1});
    return sum(pairwise_sq_distance(reshape(y, {2, y.numel() / 2})));
  };
  EXPECT_LE(check_gradients(fn, in).max_rel_error, 1e-4);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogClassCount) {
  const std::vector<std::size_t> t{2};
  EXPECT_NEAR(softmax_cross_entropy(Tensor::zeros({4}), t).item(), std::log(4.0), 1e-15);
  const std::vector<std::size_t> tb{0, 3, 1};
  EXPECT_NEAR(softmax_cross_entropy(Tensor::full({3, 4}, 5.0), tb).item(), 1.386294, 1e-6);
}

TEST(SoftmaxCrossEntropy, AveragesOverRows) {
  // Row 0: logits (0, ln 3) target 1 -> -log(3/4); row 1: (0,0) -> ln 2.
  Tensor logits = Tensor::from_data({2, 2}, {0.0, std::log(3.0), 0.0, 0.0});
  const std::vector<std::size_t> t{1, 0};
  EXPECT_NEAR(softmax_cross_entropy(logits, t).item(), 0.5 * (-std::log(0.75) + std::log(2.0)),
              1e-15);
}

TEST(SoftmaxCrossEntropy, StableForLargeLogits) {
  Tensor logits = Tensor::from_data({2}, {1000.0, 0.0});
  const std::vector<std::size_t> t{1};
  EXPECT_NEAR(softmax_cross_entropy(logits, t).item(), 1000.0, 1e-9);
}

TEST(SoftmaxCrossEntropy, TargetOutOfRangeThrows) {
  const std::vector<std::size_t> t{4};
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({4}), t), std::out_of_range);
}

TEST(L2Normalize, ThreeFourFiveTriangle) {
  Tensor y = l2_normalize(Tensor::from_data({2}, {3.0, 4.0}));
  EXPECT_NEAR(y.at(0), 0.6, 1e-12);
  EXPECT_NEAR(y.at(1), 0.8, 1e-12);
}

TEST(L2Normalize, RowsHaveUnitNormAndZeroStaysFinite) {
  std::mt19937_64 rng(8);
  Tensor y = l2_normalize(random_tensor({5, 7}, rng));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) s += y.at(r * 7 + j) * y.at(r * 7 + j);
    EXPECT_NEAR(s, 1.0, 1e-10);
  }
  Tensor z = Tensor::zeros({3}, true);
  Tensor out = l2_normalize(z);
  backward(sum(out));
  for (double g : z.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Concat, ShapesAndGradientSplit) {
  std::mt19937_64 rng(9);
  Tensor a = random_tensor({2, 3}, rng), b = random_tensor({5, 3}, rng);
  std::vector<Tensor> parts{a, b};
  Tensor c = concat(parts, 0);
  EXPECT_EQ(c.shape(), (Shape{7, 3}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(c.at(i), a.at(i));
  for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(c.at(6 + i), b.at(i));
  // Weight each output element by its flat index; the split must route exactly.
  std::vector<double> wts(21);
  for (std::size_t i = 0; i < 21; ++i) wts[i] = static_cast<double>(i);
  backward(sum(fully_connected(reshape(c, {21}), Tensor::from_data({1, 21}, wts), Tensor::zeros({1}))));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(a.grad()[i], static_cast<double>(i));
  for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(b.grad()[i], static_cast<double>(6 + i));
}

TEST(Concat, InnerAxis) {
  Tensor a = Tensor::from_data({2, 1}, {1, 2});
  Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  std::vector<Tensor> parts{a, b};
  Tensor c = concat(parts, 1);
  const std::vector<double> expect{1, 3, 4, 2, 5, 6};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(c.at(i), expect[i]);
  std::vector<Tensor> bad{a, Tensor::zeros({3, 1})};
  EXPECT_THROW(concat(bad, 1), ShapeError);
}

TEST(Slice, SelectsRange) {
  Tensor x = Tensor::from_data({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor y = slice(x, 1, 1, 3);
  EXPECT_EQ(y.shape(), (Shape{2, 2}));
  const std::vector<double> expect{1, 2, 4, 5};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y.at(i), expect[i]);
  EXPECT_THROW(slice(x, 1, 2, 2), ShapeError);
}

TEST(GatherRows, RepeatedRowsAccumulate) {
  Tensor x = Tensor::from_data({3, 2}, {0, 1, 2, 3, 4, 5}, true);
  const std::vector<std::size_t> rows{2, 0, 2};
  Tensor y = gather_rows(x, rows);
  EXPECT_EQ(y.at(0), 4.0);
  EXPECT_EQ(y.at(2), 0.0);
  backward(sum(y));
  const std::vector<double> expect{1, 1, 0, 0, 2, 2};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(x.grad()[i], expect[i]);
}

TEST(GlobalAvgPool, AveragesTrailingAxes) {
  Tensor x = Tensor::from_data({2, 2, 2}, {1, 2, 3, 4, 10, 10, 10, 14});
  Tensor y = global_avg_pool(x);
  EXPECT_EQ(y.shape(), (Shape{2}));
  EXPECT_EQ(y.at(0), 2.5);
  EXPECT_EQ(y.at(1), 11.0);
}

TEST(FullyConnected, MatchesMatrixProduct) {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, -1, 0, 1});
  Tensor w = Tensor::from_data({2, 3}, {1, 0, 0, 1, 1, 1});
  Tensor b = Tensor::from_data({2}, {0.5, -0.5});
  Tensor y = fully_connected(x, w, b);
  const std::vector<double> expect{1.5, 5.5, -0.5, -0.5};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y.at(i), expect[i]);
}

TEST(PairwiseSqDistance, MatchesHalfSquaredNorm) {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({6, 4}, rng);
  Tensor d = pairwise_sq_distance(x);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double s = 0.0;
      for (std::size_t e = 0; e < 4; ++e) {
        const double t = x.at(i * 4 + e) - x.at(j * 4 + e);
        s += t * t;
      }
      EXPECT_NEAR(d.at(i * 6 + j), 0.5 * s, 1e-14);
    }
}

TEST(HingeSum, ValueAndKinkSubgradient) {
  // d[0][1] = 1, d[0][2] = 0.5.
  std::vector<double> d(9, 0.0);
  d[1] = 1.0;
  d[2] = 0.5;
  Tensor dist = Tensor::from_data({3, 3}, d, true);
  const std::vector<HingeTriple> active{{0, 1, 2}};
  EXPECT_DOUBLE_EQ(hinge_sum(dist, active, 0.3).item(), 0.8);
  backward(hinge_sum(dist, active, 0.3));
  EXPECT_EQ(dist.grad()[1], 1.0);
  EXPECT_EQ(dist.grad()[2], -1.0);
  dist.zero_grad();
  // Pre-hinge value exactly 0: the inactive branch supplies the gradient.
  backward(hinge_sum(dist, active, -0.5));
  for (double g : dist.grad()) EXPECT_EQ(g, 0.0);
}
