#pragma once

// Invariant suite behind `dmnet selfcheck`.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "dmnet/gradcheck.hpp"
#include "dmnet/training.hpp"

namespace dmnet {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

template <class T = float>
BasicTensor<T> uniform_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  BasicTensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return t;
}

template <class W>
void randomize_block(W& w, Rng& rng) {
  w.visit("w", [&](const std::string&, BasicTensor<double>& t) {
    for (auto& v : t.data()) v = 0.5 * (2 * rng.uniform() - 1);
  });
}

template <class W>
std::vector<std::pair<std::string, Tensor64>> block_leaves(W& w) {
  std::vector<std::pair<std::string, Tensor64>> out;
  w.visit("w", [&](const std::string& n, BasicTensor<double>& t) { out.emplace_back(n, t); });
  return out;
}

}  // namespace detail

inline constexpr double kGradTolerance = 1e-3;

/// Max abs reconstruction error and worst relative energy error over random
/// tensors up to (2, 8, 64, 64).
inline std::vector<CheckResult> check_wavelet(std::size_t trials = 100, std::uint64_t seed = 1) {
  Rng rng(seed);
  double worst_rt = 0, worst_energy = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(8);
    const std::size_t h = 2 * (1 + rng.below(32)), w = 2 * (1 + rng.below(32));
    auto x = detail::uniform_tensor(Shape{n, c, h, w}, rng);
    auto q = dwt_haar(x);
    auto back = idwt_haar(q);
    double e_in = 0, e_out = 0;
    for (float v : x.data()) e_in += double(v) * v;
    for (const Tensor* b : {&q.ll, &q.lh, &q.hl, &q.hh})
      for (float v : b->data()) e_out += double(v) * v;
    for (std::size_t i = 0; i < x.numel(); ++i)
      worst_rt = std::max(worst_rt, std::abs(double(back.data()[i]) - double(x.data()[i])));
    worst_energy = std::max(worst_energy, std::abs(e_in - e_out) / e_in);
  }
  return {{"dwt round trip", worst_rt < 1e-5, detail::fmt("max abs error %.3g (tol 1e-5)", worst_rt)},
          {"dwt energy", worst_energy < 1e-4, detail::fmt("max relative error %.3g (tol 1e-4)", worst_energy)}};
}

/// Parseval on random square and rectangular inputs from 8x8 to 64x64.
inline CheckResult check_parseval(std::size_t trials = 20, std::uint64_t seed = 2) {
  Rng rng(seed);
  double worst = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t h = 8 + rng.below(57), w = 8 + rng.below(57);
    auto x = detail::uniform_tensor(Shape{1, 2, h, w}, rng);
    auto f = fft2(x);
    double ex = 0, ef = 0;
    for (float v : x.data()) ex += double(v) * v;
    for (std::size_t i = 0; i < f.re.numel(); ++i)
      ef += double(f.re.data()[i]) * f.re.data()[i] + double(f.im.data()[i]) * f.im.data()[i];
    ef /= double(h * w);
    worst = std::max(worst, std::abs(ex - ef) / ex);
  }
  return {"fft parseval", worst < 1e-3, detail::fmt("max relative error %.3g (tol 1e-3)", worst)};
}

/// Central finite differences at (1, 8, 8, 8) over the input and every parameter.
inline std::vector<CheckResult> check_gradients(std::uint64_t seed = 3) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  auto x = detail::uniform_tensor<double>(Shape{1, 8, 8, 8}, rng);
  Rng pr(seed + 100);
  auto proj = detail::uniform_tensor<double>(Shape{1, 8, 8, 8}, pr);
  auto report = [&](const std::string& name, const GradCheckReport& rep) {
    std::string worst_leaf;
    double worst = 0;
    for (const auto& e : rep.entries)
      if (e.rel_error >= worst) worst = e.rel_error, worst_leaf = e.name;
    out.push_back({"grad " + name, rep.attached && worst < kGradTolerance,
                   detail::fmt("max relative error %.3g (tol 1e-3)", worst) + " at " + worst_leaf});
  };
  auto block = [&](const std::string& name, auto& w, auto fwd) {
    detail::randomize_block(w, rng);
    auto leaves = detail::block_leaves(w);
    leaves.emplace_back("input", x);
    report(name, gradcheck([&] { return sum(mul(fwd(), proj)); }, leaves));
  };
  const AblationToggles full{};
  const AblationToggles no_dyn{false, FreqDomain::wavelet, FreqLoss::fourier};
  const AblationToggles fourier{true, FreqDomain::fourier, FreqLoss::fourier};
  {
    auto w = SMAWeights<double>::make(8, rng);
    block("SMA", w, [&] { return sma_forward(x, w); });
  }
  {
    auto w = WMAWeights<double>::make(8, full, rng);
    block("WMA dynamic", w, [&] { return wma_forward(x, w, full); });
  }
  {
    auto w = WMAWeights<double>::make(8, no_dyn, rng);
    block("WMA no-dynamic", w, [&] { return wma_forward(x, w, no_dyn); });
  }
  {
    auto w = WMAWeights<double>::make(8, fourier, rng);
    block("WMA fourier-domain", w, [&] { return wma_forward(x, w, fourier); });
  }
  {
    auto w = FFNWeights<double>::make(8, 2.0, rng);
    block("FFN", w, [&] { return ffn_forward(x, w); });
  }
  {
    auto w = SMTWeights<double>::make(8, 2.0, rng);
    block("SMT", w, [&] { return smt_forward(x, w); });
  }
  {
    auto w = WMTWeights<double>::make(8, 2.0, full, rng);
    block("WMT", w, [&] { return wmt_forward(x, w, full); });
  }
  // Odd sizes keep every spectrum bin off the real axis branch cut.
  auto sr = detail::uniform_tensor<double>(Shape{1, 3, 7, 5}, rng, 0, 1);
  auto hr = detail::uniform_tensor<double>(Shape{1, 3, 7, 5}, rng, 0, 1);
  report("pixel_loss", gradcheck([&] { return pixel_loss(sr, hr); }, {{"sr", sr}}));
  report("frequency_loss", gradcheck([&] { return frequency_loss(sr, hr); }, {{"sr", sr}}));
  report("total_loss", gradcheck([&] { return total_loss(sr, hr, 0.1); }, {{"sr", sr}}));
  return out;
}

/// Zeroed output projections turn both wrappers into the identity.
inline CheckResult check_residual_identity(std::uint64_t seed = 4) {
  Rng rng(seed);
  auto smt = SMTWeights<float>::make(8, 2.0, rng);
  auto wmt = WMTWeights<float>::make(8, 2.0, AblationToggles{}, rng);
  for (auto* c : {&smt.attn.proj, &smt.ffn.project, &wmt.attn.expand, &wmt.ffn.project}) {
    for (auto& v : c->weight.data()) v = 0;
    for (auto& v : c->bias->data()) v = 0;
  }
  auto x = detail::uniform_tensor(Shape{1, 8, 6, 6}, rng);
  auto a = smt_forward(x, smt), b = wmt_forward(x, wmt, AblationToggles{});
  double worst = 0;
  for (std::size_t i = 0; i < x.numel(); ++i)
    worst = std::max({worst, std::abs(double(a.data()[i]) - x.data()[i]), std::abs(double(b.data()[i]) - x.data()[i])});
  return {"residual identity", worst == 0, detail::fmt("max abs deviation %.3g (tol 0)", worst)};
}

/// Seeded construction and forward are bit-reproducible.
inline CheckResult check_determinism(std::uint64_t seed = 5) {
  DMNetConfig cfg;
  cfg.channels = 8;
  cfg.n_groups = cfg.n_blocks = 1;
  auto w1 = DMNetWeights<float>::make(cfg, seed), w2 = DMNetWeights<float>::make(cfg, seed);
  Rng rng(seed);
  auto x = detail::uniform_tensor(Shape{1, 3, 12, 12}, rng, 0, 1);
  auto a = super_resolve(cfg, w1, x), b = super_resolve(cfg, w2, x), c = super_resolve(cfg, w1, x);
  const bool same = std::equal(a.data().begin(), a.data().end(), b.data().begin()) &&
                    std::equal(a.data().begin(), a.data().end(), c.data().begin());
  return {"determinism", same, same ? "forward outputs bit-identical" : "forward outputs differ"};
}

inline std::vector<CheckResult> run_selfcheck() {
  std::vector<CheckResult> all = check_wavelet();
  all.push_back(check_parseval());
  for (auto& r : check_gradients()) all.push_back(std::move(r));
  all.push_back(check_residual_identity());
  all.push_back(check_determinism());
  return all;
}

}  // namespace dmnet
