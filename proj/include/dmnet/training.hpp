#pragma once

// Dual-domain loss, Adam, cosine learning-rate schedule, patch sampling with
// dihedral augmentation, and the training loop.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "dmnet/metrics.hpp"
#include "dmnet/model.hpp"

namespace dmnet {

struct TrainConfig {
  std::size_t batch = 64;
  std::size_t patch = 64;  // LR-side pixels
  double lr0 = 5e-4;
  double lr_min_ratio = 0.01;
  std::size_t total_iters = 500000;
  double lambda = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool augment = true;
  std::size_t log_every = 100;
  std::size_t ckpt_every = 0;  // 0: only at the end

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
    if (batch == 0) fail("batch must be >= 1");
    if (patch == 0 || patch % 2 != 0) fail("patch must be a positive even number, got " + std::to_string(patch));
    if (!(lambda >= 0)) fail("lambda must be >= 0");
    if (!(lr0 >= 0)) fail("lr0 must be >= 0");
    if (total_iters == 0) fail("iters must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
    if (log_every == 0) fail("log_every must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Losses

template <class T>
BasicTensor<T> pixel_loss(const BasicTensor<T>& sr, const BasicTensor<T>& hr) {
  require(sr.shape() == hr.shape(), "pixel_loss: shape mismatch " + sr.shape().str() + " vs " + hr.shape().str());
  return mean_abs_diff(sr, hr);
}

/// mean |DWT(sr) - DWT(hr)| over all four subbands.
template <class T>
BasicTensor<T> wavelet_loss(const BasicTensor<T>& sr, const BasicTensor<T>& hr) {
  require(sr.shape() == hr.shape(), "wavelet_loss: shape mismatch " + sr.shape().str() + " vs " + hr.shape().str());
  return mean_abs_diff(dwt_haar_stacked(sr), dwt_haar_stacked(hr));
}

template <class T>
struct LossTerms {
  BasicTensor<T> pixel;
  BasicTensor<T> freq;
  BasicTensor<T> total;
};

template <class T>
LossTerms<T> loss_terms(const BasicTensor<T>& sr, const BasicTensor<T>& hr, double lambda,
                        FreqLoss kind = FreqLoss::fourier) {
  require(lambda >= 0, "total_loss: lambda must be >= 0");
  auto lp = pixel_loss(sr, hr);
  auto lf = kind == FreqLoss::fourier ? frequency_loss(sr, hr) : wavelet_loss(sr, hr);
  auto total = add(lp, scale(lf, static_cast<T>(lambda)));
  return {lp, lf, total};
}

/// L_pixel + lambda * L_fre.
template <class T>
BasicTensor<T> total_loss(const BasicTensor<T>& sr, const BasicTensor<T>& hr, double lambda,
                          FreqLoss kind = FreqLoss::fourier) {
  return loss_terms(sr, hr, lambda, kind).total;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over `params` (handles share storage with
/// the model). Every parameter must carry a gradient.
template <class Named>
void adam_step(std::vector<Named>& params, AdamState& st, double lr, const AdamParams& hp = {}) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.tensor.numel(), 0.0f);
      st.v.emplace_back(p.tensor.numel(), 0.0f);
    }
  }
  require(st.m.size() == params.size(), "adam_step: optimizer state does not match parameter list");
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw std::invalid_argument("adam_step: missing gradient for " + p.name);
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  const float b1 = static_cast<float>(hp.beta1), b2 = static_cast<float>(hp.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].tensor.data();
    auto g = params[k].tensor.grad();
    auto& m = st.m[k];
    auto& v = st.v[k];
    require(m.size() == w.size(), "adam_step: moment size mismatch for " + params[k].name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] = static_cast<float>(w[i] - lr * mh / (std::sqrt(vh) + hp.eps));
    }
  }
}

/// Cosine decay from lr0 at iteration 0 to lr0 * lr_min_ratio at total_iters.
inline double lr_schedule(std::size_t iter, const TrainConfig& cfg) {
  const double lo = cfg.lr0 * cfg.lr_min_ratio;
  const double t = static_cast<double>(iter) / static_cast<double>(cfg.total_iters);
  return lo + 0.5 * (cfg.lr0 - lo) * (1.0 + std::cos(std::numbers::pi * t));
}

// ---------------------------------------------------------------------------
// Batches

/// One of the 8 dihedral transforms: bit 0 flips horizontally, bits 1-2 give
/// the number of counter-clockwise quarter turns applied afterwards. Code 0 is
/// the identity.
template <class T>
BasicTensor<T> apply_dihedral(const BasicTensor<T>& x, unsigned code) {
  const Shape s = x.shape();
  const bool flip = code & 1u;
  const unsigned rot = (code >> 1) & 3u;
  const bool swap = rot % 2 == 1;
  const Shape os{s.n, s.c, swap ? s.w : s.h, swap ? s.h : s.w};
  BasicTensor<T> out(os);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx) {
          const std::size_t fx = flip ? s.w - 1 - xx : xx;
          std::size_t oy = y, ox = fx;
          switch (rot) {
            case 1: oy = s.w - 1 - fx, ox = y; break;
            case 2: oy = s.h - 1 - y, ox = s.w - 1 - fx; break;
            case 3: oy = fx, ox = s.h - 1 - y; break;
            default: break;
          }
          out.at(n, c, oy, ox) = x.at(n, c, y, xx);
        }
  return out;
}

struct Batch {
  Tensor lr;  // (B, 3, p, p)
  Tensor hr;  // (B, 3, s p, s p)
};

/// Random aligned crops: the HR origin is `scale` times the LR origin.
inline Batch sample_batch(const Dataset& data, const TrainConfig& cfg, std::size_t scale, Rng& rng) {
  require(!data.empty(), "sample_batch: empty dataset");
  const std::size_t p = cfg.patch, hp = p * scale;
  Batch b{Tensor(Shape{cfg.batch, 3, p, p}), Tensor(Shape{cfg.batch, 3, hp, hp})};
  for (std::size_t i = 0; i < cfg.batch; ++i) {
    const ImagePair& pair = data[rng.below(data.size())];
    const Shape ls = pair.lr.shape(), hs = pair.hr.shape();
    if (ls.h < p || ls.w < p) {
      throw std::invalid_argument("sample_batch: image " + pair.name + " (" + std::to_string(ls.h) +
                                  "x" + std::to_string(ls.w) + " LR) is smaller than patch " +
                                  std::to_string(p));
    }
    require(hs.h == ls.h * scale && hs.w == ls.w * scale,
            "sample_batch: HR size of " + pair.name + " is not scale x LR size");
    const std::size_t y = rng.below(ls.h - p + 1), x = rng.below(ls.w - p + 1);
    Tensor lr = crop(pair.lr, y, x, p, p);
    Tensor hr = crop(pair.hr, y * scale, x * scale, hp, hp);
    if (cfg.augment) {
      const auto code = static_cast<unsigned>(rng.below(8));
      lr = apply_dihedral(lr, code);
      hr = apply_dihedral(hr, code);
    }
    std::copy(lr.data().begin(), lr.data().end(), b.lr.ptr() + i * lr.numel());
    std::copy(hr.data().begin(), hr.data().end(), b.hr.ptr() + i * hr.numel());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training loop

struct LossRecord {
  std::size_t iter = 0;  // iterations completed
  double lr = 0;
  double l_pixel = 0;
  double l_fre = 0;
  double l_total = 0;
};

/// `iter lr l_pixel l_fre l_total`, fixed decimal notation.
inline std::string format_loss_record(const LossRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu %.10f %.8f %.8f %.8f", r.iter, r.lr, r.l_pixel, r.l_fre, r.l_total);
  return buf;
}

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& msg, std::size_t iter, Batch batch)
      : std::runtime_error(msg), iter_(iter), batch_(std::move(batch)) {}
  [[nodiscard]] std::size_t iter() const noexcept { return iter_; }
  [[nodiscard]] const Batch& batch() const noexcept { return batch_; }

 private:
  std::size_t iter_;
  Batch batch_;
};

struct TrainHooks {
  std::function<void(const LossRecord&)> on_log;
  std::function<void(std::size_t iter, DMNetWeights<float>&, const AdamState&)> on_checkpoint;
};

struct TrainResult {
  DMNetWeights<float> weights;
  AdamState optimizer;
  std::vector<LossRecord> log;
};

/// Runs `tc.total_iters` iterations of sample -> forward -> loss -> backward
/// -> Adam, starting from `init` (or a fresh seeded model).
inline TrainResult train_loop(const DMNetConfig& mc, const TrainConfig& tc, const Dataset& data,
                              const TrainHooks& hooks = {},
                              std::optional<DMNetWeights<float>> init = std::nullopt,
                              AdamState opt = {}) {
  mc.validate();
  tc.validate();
  TrainResult res{init ? std::move(*init) : DMNetWeights<float>::make(mc, tc.seed), std::move(opt), {}};
  res.weights.set_requires_grad(true);
  auto params = res.weights.parameters();
  Rng rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  const AdamParams hp{tc.beta1, tc.beta2, tc.adam_eps};

  double acc_pixel = 0, acc_fre = 0, acc_total = 0;
  std::size_t acc_n = 0;
  for (std::size_t it = 0; it < tc.total_iters; ++it) {
    Batch batch = sample_batch(data, tc, mc.scale, rng);
    const double lr = lr_schedule(it, tc);
    for (auto& p : params) p.tensor.zero_grad();

    Tape tape;
    LossTerms<float> lt;
    {
      TapeScope scope(tape);
      const Tensor sr = super_resolve(mc, res.weights, batch.lr);
      lt = loss_terms(sr, batch.hr, tc.lambda, mc.ablation.loss);
    }
    const double lp = lt.pixel.item(), lf = lt.freq.item(), ltot = lt.total.item();
    if (!std::isfinite(lp) || !std::isfinite(lf) || !std::isfinite(ltot)) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << it << ": l_pixel=" << lp << " l_fre=" << lf
         << " l_total=" << ltot;
      throw NonFiniteLoss(os.str(), it, std::move(batch));
    }
    const auto report = backward(tape, lt.total);
    if (!report.attached) throw std::logic_error("train_loop: loss is detached from the parameters");
    adam_step(params, res.optimizer, lr, hp);

    acc_pixel += lp;
    acc_fre += lf;
    acc_total += ltot;
    ++acc_n;
    const std::size_t done = it + 1;
    if (done % tc.log_every == 0 || done == tc.total_iters) {
      const double k = static_cast<double>(acc_n);
      LossRecord rec{done, lr, acc_pixel / k, acc_fre / k, acc_total / k};
      res.log.push_back(rec);
      if (hooks.on_log) hooks.on_log(rec);
      acc_pixel = acc_fre = acc_total = 0;
      acc_n = 0;
    }
    if (hooks.on_checkpoint &&
        ((tc.ckpt_every > 0 && done % tc.ckpt_every == 0) || done == tc.total_iters)) {
      hooks.on_checkpoint(done, res.weights, res.optimizer);
    }
  }
  for (auto& p : params) p.tensor.drop_grad();
  res.weights.set_requires_grad(false);
  return res;
}

}  // namespace dmnet
