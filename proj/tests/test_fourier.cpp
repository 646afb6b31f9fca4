#include <cmath>
#include <complex>
#include <numbers>

#include "dmnet/fourier.hpp"
#include "test_util.hpp"

using namespace dmnet;
using dmnet::test::max_abs_diff;
using dmnet::test::random_tensor;

namespace {

using cd = std::complex<double>;

// e^{-2 pi i k / n}, exact when k / n is a multiple of a quarter turn.
cd twiddle(std::size_t k, std::size_t n) {
  k %= n;
  if (4 * k % n == 0) {
    static const cd quarter[4] = {{1, 0}, {0, -1}, {-1, 0}, {0, 1}};
    return quarter[4 * k / n];
  }
  const double t = -2.0 * std::numbers::pi * double(k) / double(n);
  return {std::cos(t), std::sin(t)};
}

// O(N^2) DFT of one plane by definition.
std::vector<cd> dft_plane(const Tensor& x, std::size_t n, std::size_t c) {
  const Shape s = x.shape();
  std::vector<cd> out(s.plane());
  for (std::size_t u = 0; u < s.h; ++u)
    for (std::size_t v = 0; v < s.w; ++v) {
      cd acc = 0;
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx)
          acc += double(x.at(n, c, y, xx)) * twiddle(u * y, s.h) * twiddle(v * xx, s.w);
      out[u * s.w + v] = acc;
    }
  return out;
}

double oracle_phase(cd z) {
  if (z == cd(0, 0)) return 0;
  double p = std::atan2(z.imag(), z.real());
  return p <= -std::numbers::pi ? std::numbers::pi : p;
}

double oracle_frequency_loss(const Tensor& sr, const Tensor& hr) {
  const Shape s = sr.shape();
  double acc = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const auto a = dft_plane(sr, n, c), b = dft_plane(hr, n, c);
      for (std::size_t i = 0; i < a.size(); ++i)
        acc += std::abs(std::abs(a[i]) - std::abs(b[i])) + std::abs(oracle_phase(a[i]) - oracle_phase(b[i]));
    }
  return acc / double(2 * s.numel());
}

double energy(std::span<const float> v) {
  double e = 0;
  for (float x : v) e += double(x) * x;
  return e;
}

}  // namespace

TEST(Fft2, ConstantImageHasOnlyDc) {
  Tensor x(Shape{1, 1, 4, 6}, 0.5f);
  auto f = fft2(x);
  EXPECT_FLOAT_EQ(f.re.data()[0], 0.5f * 24);
  for (std::size_t i = 1; i < 24; ++i) {
    EXPECT_NEAR(f.re.data()[i], 0.0f, 1e-6);
    EXPECT_NEAR(f.im.data()[i], 0.0f, 1e-6);
  }
  EXPECT_EQ(f.im.data()[0], 0.0f);
}

TEST(Fft2, ImpulseIsFlat) {
  Tensor x(Shape{1, 1, 8, 5});
  x.at(0, 0, 0, 0) = 1;
  auto f = fft2(x);
  for (std::size_t i = 0; i < 40; ++i) {
    EXPECT_NEAR(f.re.data()[i], 1.0f, 1e-6);
    EXPECT_NEAR(f.im.data()[i], 0.0f, 1e-6);
  }
}

TEST(Fft2, MatchesDefinitionOnMixedSizes) {
  Rng rng(31);
  for (const Shape s : {Shape{1, 2, 8, 8}, Shape{2, 1, 6, 10}, Shape{1, 1, 7, 16}}) {
    auto x = random_tensor(s, rng);
    auto f = fft2(x);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        auto ref = dft_plane(x, n, c);
        for (std::size_t i = 0; i < ref.size(); ++i) {
          EXPECT_NEAR(f.re.data()[(n * s.c + c) * s.plane() + i], ref[i].real(), 1e-4);
          EXPECT_NEAR(f.im.data()[(n * s.c + c) * s.plane() + i], ref[i].imag(), 1e-4);
        }
      }
  }
}

TEST(Fft2, Parseval) {
  Rng rng(32);
  for (const Shape s : {Shape{1, 1, 8, 8}, Shape{1, 3, 12, 20}, Shape{1, 1, 64, 64}, Shape{1, 2, 32, 48}}) {
    auto x = random_tensor(s, rng);
    auto f = fft2(x);
    const double lhs = energy(f.re.data()) + energy(f.im.data());
    const double rhs = double(s.plane()) * energy(x.data());
    EXPECT_LT(std::abs(lhs - rhs) / rhs, 1e-3) << s.str();
  }
}

TEST(Fft2, RealInputIsConjugateSymmetric) {
  Rng rng(33);
  auto x = random_tensor(Shape{1, 1, 6, 8}, rng);
  auto f = fft2(x);
  for (std::size_t u = 0; u < 6; ++u)
    for (std::size_t v = 0; v < 8; ++v) {
      const std::size_t mu = (6 - u) % 6, mv = (8 - v) % 8;
      EXPECT_NEAR(f.re.at(0, 0, u, v), f.re.at(0, 0, mu, mv), 1e-5);
      EXPECT_NEAR(f.im.at(0, 0, u, v), -f.im.at(0, 0, mu, mv), 1e-5);
    }
}

TEST(Fft2, InverseRoundTrip) {
  Rng rng(34);
  for (const Shape s : {Shape{2, 3, 16, 16}, Shape{1, 2, 10, 6}}) {
    auto x = random_tensor(s, rng);
    EXPECT_LT(max_abs_diff(ifft2_real(fft2(x)).data(), x.data()), 1e-4);
  }
}

TEST(AmplitudePhase, ThreeFour) {
  ComplexField f{Tensor(Shape{1, 1, 1, 1}, 3.0f), Tensor(Shape{1, 1, 1, 1}, 4.0f)};
  auto [a, p] = amplitude_phase(f);
  EXPECT_FLOAT_EQ(a.item(), 5.0f);
  EXPECT_NEAR(p.item(), std::atan2(4.0, 3.0), 1e-6);
  EXPECT_NEAR(p.item(), 0.9273, 1e-4);
}

TEST(AmplitudePhase, PositiveRealAxis) {
  ComplexField f{Tensor(Shape{1, 1, 1, 1}, 1.0f), Tensor(Shape{1, 1, 1, 1}, 0.0f)};
  auto [a, p] = amplitude_phase(f);
  EXPECT_EQ(a.item(), 1.0f);
  EXPECT_EQ(p.item(), 0.0f);
}

TEST(AmplitudePhase, OriginIsZeroWithZeroGradient) {
  Tensor64 z(Shape{1, 2, 1, 1});
  z.set_requires_grad(true);
  Tape64 tape;
  Tensor64 loss;
  {
    TapeScope scope(tape);
    loss = sum(amplitude_phase_stacked(z));
  }
  EXPECT_EQ(loss.item(), 0.0);
  (void)backward(tape, loss);
  EXPECT_EQ(z.grad()[0], 0.0);
  EXPECT_EQ(z.grad()[1], 0.0);
}

TEST(AmplitudePhase, PhaseRangeIsHalfOpen) {
  ComplexField f{Tensor(Shape{1, 1, 1, 2}, {-1.0f, -1.0f}), Tensor(Shape{1, 1, 1, 2}, {0.0f, -0.0f})};
  auto [a, p] = amplitude_phase(f);
  EXPECT_FLOAT_EQ(p.data()[0], std::numbers::pi_v<float>);
  EXPECT_FLOAT_EQ(p.data()[1], std::numbers::pi_v<float>);
  for (float v : a.data()) EXPECT_GE(v, 0.0f);
}

TEST(FrequencyLoss, ZeroOnIdenticalAndSymmetric) {
  Rng rng(35);
  auto a = random_tensor(Shape{1, 3, 8, 8}, rng), b = random_tensor(Shape{1, 3, 8, 8}, rng);
  EXPECT_EQ(frequency_loss(a, a).item(), 0.0f);
  EXPECT_EQ(frequency_loss(a, b).item(), frequency_loss(b, a).item());
}

TEST(FrequencyLoss, MatchesDefinitionOracleOnFourByFour) {
  Rng rng(36);
  auto a = random_tensor(Shape{1, 3, 4, 4}, rng, 0, 1), b = random_tensor(Shape{1, 3, 4, 4}, rng, 0, 1);
  const double got = frequency_loss(a, b).item();
  const double ref = oracle_frequency_loss(a, b);
  EXPECT_LT(std::abs(got - ref) / ref, 1e-4) << got << " vs " << ref;
}

TEST(FrequencyLoss, RejectsShapeMismatch) {
  EXPECT_THROW((void)frequency_loss(Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 4, 6})), ShapeError);
}

// Odd sizes have no Nyquist bins, so with positive inputs no real bin sits on
// the negative real axis where the phase jumps by 2 pi.
TEST(FrequencyLoss, GradientMatchesFiniteDifferences) {
  Rng rng(37);
  auto sr = random_tensor<double>(Shape{1, 3, 7, 5}, rng, 0, 1);
  auto hr = random_tensor<double>(Shape{1, 3, 7, 5}, rng, 0, 1);
  dmnet::test::expect_gradcheck(gradcheck([&] { return frequency_loss(sr, hr); }, {{"sr", sr}}));
}

TEST(Fft2, TransformGradientsMatchFiniteDifferences) {
  Rng rng(38);
  auto x = random_tensor<double>(Shape{1, 2, 4, 6}, rng);
  auto w1 = random_tensor<double>(Shape{1, 4, 4, 6}, rng);
  dmnet::test::expect_gradcheck(gradcheck([&] { return sum(mul(fft2_stacked(x), w1)); }, {{"x", x}}));
  auto z = random_tensor<double>(Shape{1, 4, 6, 4}, rng);
  auto w2 = random_tensor<double>(Shape{1, 2, 6, 4}, rng);
  dmnet::test::expect_gradcheck(gradcheck([&] { return sum(mul(ifft2_real_stacked(z), w2)); }, {{"z", z}}));
}
