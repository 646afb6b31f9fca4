#include <cmath>
#include <limits>
#include <map>

#include "dmnet/metrics.hpp"
#include "test_util.hpp"

using namespace dmnet;
using dmnet::test::random_tensor;

namespace {

Tensor solid(std::size_t h, std::size_t w, float r, float g, float b) {
  Tensor t(Shape{1, 3, h, w});
  const float rgb[3] = {r, g, b};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i) t.data()[c * h * w + i] = rgb[c];
  return t;
}

// SSIM with the 11x11 window applied as one 2-D sum per position.
double oracle_ssim(const Tensor& a, const Tensor& b) {
  const Shape s = a.shape();
  double g[11], gs = 0;
  for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-double((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + 11 <= s.h; ++y)
    for (std::size_t x = 0; x + 11 <= s.w; ++x) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wgt = g[i] * g[j] / (gs * gs);
          const double u = a.at(0, 0, y + i, x + j), v = b.at(0, 0, y + i, x + j);
          mx += wgt * u;
          my += wgt * v;
          sxx += wgt * u * u;
          syy += wgt * v * v;
          sxy += wgt * u * v;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cv = sxy - mx * my;
      total += (2 * mx * my + c1) * (2 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / double(count);
}

double keys(double x) {
  x = std::abs(x);
  if (x <= 1) return (1.5 * x - 2.5) * x * x + 1;
  if (x <= 2) return ((-0.5 * x + 2.5) * x - 4) * x + 2;
  return 0;
}

Dataset pairs_from(std::initializer_list<std::pair<const char*, std::uint64_t>> items, std::size_t scale) {
  Dataset d;
  for (const auto& [name, seed] : items) {
    Rng rng(seed);
    d.push_back(make_pair_from_hr(name, random_tensor(Shape{1, 3, 24, 24}, rng, 0, 1), scale));
  }
  return d;
}

}  // namespace

TEST(RgbToY, BlackWhiteAndPrimaries) {
  EXPECT_NEAR(rgb_to_y(solid(1, 1, 0, 0, 0)).item(), 16.0 / 255, 1e-7);
  EXPECT_NEAR(rgb_to_y(solid(1, 1, 1, 1, 1)).item(), 235.0 / 255, 1e-7);
  EXPECT_NEAR(rgb_to_y(solid(1, 1, 1, 0, 0)).item(), (65.481 + 16) / 255, 1e-7);
  EXPECT_NEAR(rgb_to_y(solid(1, 1, 0, 1, 0)).item(), (128.553 + 16) / 255, 1e-7);
  EXPECT_NEAR(rgb_to_y(solid(1, 1, 0, 0, 1)).item(), (24.966 + 16) / 255, 1e-7);
  EXPECT_THROW((void)rgb_to_y(Tensor(Shape{1, 1, 2, 2})), ShapeError);
}

TEST(Psnr, IdenticalIsInfinite) {
  Rng rng(200);
  auto a = random_tensor(Shape{1, 1, 8, 8}, rng, 0, 1);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
}

TEST(Psnr, UniformOneLevelErrorClosedForm) {
  Tensor a(Shape{1, 1, 16, 16}, 0.5f), b(Shape{1, 1, 16, 16});
  for (std::size_t i = 0; i < b.numel(); ++i) b.data()[i] = 0.5f + (i % 2 ? 1.0f : -1.0f) / 255.0f;
  const double p = psnr(a, b);
  EXPECT_NEAR(p, 20 * std::log10(255.0), 0.01);
  EXPECT_NEAR(p, 48.13, 0.01);
}

TEST(Psnr, MatchesFormulaOracleSymmetricAndMonotone) {
  Rng rng(201);
  auto a = random_tensor<double>(Shape{1, 1, 10, 9}, rng, 0, 1);
  auto b = random_tensor<double>(Shape{1, 1, 10, 9}, rng, 0, 1);
  double se = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) se += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  const double ref = 10 * std::log10(1.0 / (se / double(a.numel())));
  EXPECT_NEAR(psnr(a, b), ref, 1e-6);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  BasicTensor<double> c(b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) c.data()[i] = a.data()[i] + 0.5 * (b.data()[i] - a.data()[i]);
  EXPECT_GT(psnr(a, c), psnr(a, b));
}

TEST(Ssim, IdenticalIsExactlyOne) {
  Rng rng(202);
  auto a = random_tensor(Shape{1, 1, 20, 17}, rng, 0, 1);
  EXPECT_EQ(ssim(a, a), 1.0);
}

TEST(Ssim, InvertedBinaryImageIsNegative) {
  Rng rng(203);
  Tensor a(Shape{1, 1, 16, 16}), b(Shape{1, 1, 16, 16});
  for (std::size_t i = 0; i < a.numel(); ++i) {
    a.data()[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
    b.data()[i] = 1.0f - a.data()[i];
  }
  EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Ssim, MatchesDirectConvolutionOracle) {
  Rng rng(204);
  auto a = random_tensor(Shape{1, 1, 19, 23}, rng, 0, 1);
  Tensor b(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    b.data()[i] = std::clamp(a.data()[i] + 0.2f * float(rng.uniform() - 0.5), 0.0f, 1.0f);
  const double got = ssim(a, b);
  EXPECT_NEAR(got, oracle_ssim(a, b), 1e-5);
  EXPECT_NEAR(got, ssim(b, a), 1e-12);
}

TEST(Ssim, RejectsImagesSmallerThanWindowAndColour) {
  EXPECT_THROW((void)ssim(Tensor(Shape{1, 1, 10, 20}), Tensor(Shape{1, 1, 10, 20})), ShapeError);
  EXPECT_THROW((void)ssim(Tensor(Shape{1, 3, 12, 12}), Tensor(Shape{1, 3, 12, 12})), ShapeError);
}

TEST(Bicubic, ConstantStaysConstant) {
  Tensor a(Shape{1, 3, 12, 12}, 0.37f);
  for (double f : {0.5, 1.0 / 3.0, 0.25, 2.0, 3.0, 4.0}) {
    auto r = bicubic_resize(a, f);
    EXPECT_EQ(r.shape().h, std::size_t(std::lround(12 * f)));
    for (float v : r.data()) ASSERT_NEAR(v, 0.37f, 1e-6) << "factor " << f;
  }
}

TEST(Bicubic, UpThenDownIsNearIdentityOnSmoothRamp) {
  Tensor a(Shape{1, 1, 16, 16});
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) a.at(0, 0, y, x) = 0.2f + 0.02f * float(x) + 0.01f * float(y);
  for (double f : {2.0, 3.0, 4.0}) {
    auto back = bicubic_resize(bicubic_resize(a, f), 1.0 / f);
    ASSERT_EQ(back.shape(), a.shape());
    EXPECT_LT(dmnet::test::max_abs_diff(back.data(), a.data()), 1e-2) << "factor " << f;
  }
}

TEST(Bicubic, CheckerDownscaleMatchesKernelSumOracle) {
  Tensor a(Shape{1, 1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) a.at(0, 0, y, x) = (x + y) % 2 ? 1.0f : 0.0f;
  auto r = bicubic_resize(a, 0.5);
  ASSERT_EQ(r.shape(), (Shape{1, 1, 2, 2}));
  // Kernel stretched by 2, centres at 2 i + 0.5, edge replicate, normalized weights.
  auto weights = [](std::size_t i) {
    std::vector<std::pair<long, double>> w;
    const double centre = 2.0 * double(i) + 0.5;
    double total = 0;
    for (long j = -4; j < 8; ++j) {
      const double v = 0.5 * keys(0.5 * (centre - double(j)));
      if (v == 0) continue;
      w.emplace_back(std::clamp(j, 0L, 3L), v);
      total += v;
    }
    for (auto& p : w) p.second /= total;
    return w;
  };
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (const auto& [yy, wy] : weights(i))
        for (const auto& [xx, wx] : weights(j)) acc += wy * wx * a.at(0, 0, std::size_t(yy), std::size_t(xx));
      EXPECT_NEAR(r.at(0, 0, i, j), acc, 1e-6) << i << "," << j;
    }
}

TEST(Bicubic, RejectsUnsupportedFactorAndNonIntegerSize) {
  EXPECT_THROW((void)bicubic_resize(Tensor(Shape{1, 1, 8, 8}), 1.5), ShapeError);
  EXPECT_THROW((void)bicubic_resize(Tensor(Shape{1, 1, 7, 8}), 0.5), ShapeError);
}

TEST(Pairs, ModCropThenDownscale) {
  Rng rng(205);
  auto p = make_pair_from_hr("x", random_tensor(Shape{1, 3, 25, 31}, rng, 0, 1), 3);
  EXPECT_EQ(p.hr.shape(), (Shape{1, 3, 24, 30}));
  EXPECT_EQ(p.lr.shape(), (Shape{1, 3, 8, 10}));
}

TEST(Evaluate, IdealOracleGivesSentinels) {
  auto data = pairs_from({{"b.png", 1}, {"a.png", 2}}, 2);
  std::map<const float*, Tensor> hr_of;
  for (const auto& p : data) hr_of[p.lr.ptr()] = p.hr;
  auto rep = evaluate([&](const Tensor& lr) { return hr_of.at(lr.ptr()); }, data, 2, "toy");
  ASSERT_EQ(rep.images.size(), 2u);
  EXPECT_TRUE(rep.errors.empty());
  EXPECT_EQ(rep.mean_psnr, std::numeric_limits<double>::infinity());
  EXPECT_EQ(rep.mean_ssim, 1.0);
  EXPECT_EQ(rep.border, 2u);
  EXPECT_NE(format_report_kv(rep).find("mean inf 1.00000000"), std::string::npos);
}

TEST(Evaluate, SortedByNameAndMeanIsArithmetic) {
  auto data = pairs_from({{"c", 3}, {"a", 4}, {"b", 5}}, 2);
  auto rep = evaluate([](const Tensor& lr) { return bicubic_resize(lr, 2.0); }, data, 2, "toy");
  ASSERT_EQ(rep.images.size(), 3u);
  EXPECT_EQ(rep.images[0].name, "a");
  EXPECT_EQ(rep.images[2].name, "c");
  double ps = 0, ss = 0;
  for (const auto& im : rep.images) {
    ps += im.psnr;
    ss += im.ssim;
    EXPECT_TRUE(std::isfinite(im.psnr));
  }
  EXPECT_NEAR(rep.mean_psnr, ps / 3, 1e-12);
  EXPECT_NEAR(rep.mean_ssim, ss / 3, 1e-12);
}

TEST(Evaluate, BetterUpscalerScoresHigher) {
  auto data = pairs_from({{"a", 6}, {"b", 7}}, 2);
  auto bic = evaluate([](const Tensor& lr) { return bicubic_resize(lr, 2.0); }, data, 2, "toy");
  auto blurry = evaluate(
      [](const Tensor& lr) { return bicubic_resize(bicubic_resize(bicubic_resize(lr, 0.5), 2.0), 2.0); }, data, 2,
      "toy");
  EXPECT_GT(bic.mean_psnr, blurry.mean_psnr);
}

TEST(Evaluate, MismatchedOutputIsRejectedPerImage) {
  auto data = pairs_from({{"good", 8}, {"bad", 9}}, 2);
  auto rep = evaluate(
      [&](const Tensor& lr) {
        auto up = bicubic_resize(lr, 2.0);
        return lr.ptr() == data[0].lr.ptr() ? up : crop(up, 0, 0, 20, 24);
      },
      data, 2, "toy");
  ASSERT_EQ(rep.images.size(), 1u);
  EXPECT_EQ(rep.images[0].name, "good");
  ASSERT_EQ(rep.errors.size(), 1u);
  EXPECT_EQ(rep.errors[0].rfind("bad:", 0), 0u);
  EXPECT_THROW((void)evaluate([](const Tensor& lr) { return lr; }, Dataset{}, 2, "empty"), ShapeError);
}

TEST(Quantize, RoundsHalfAwayFromZeroAndClamps) {
  Tensor a(Shape{1, 1, 1, 4}, {-0.2f, 1.3f, 0.5f / 255.0f * 1.0000001f, 0.4f});
  auto q = quantize8(a);
  EXPECT_EQ(q.data()[0], 0.0f);
  EXPECT_EQ(q.data()[1], 1.0f);
  EXPECT_EQ(q.data()[2], float(1.0 / 255.0));
  EXPECT_EQ(q.data()[3], float(102.0 / 255.0));
}
