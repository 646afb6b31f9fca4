#pragma once

// Differentiable primitives. Every op computes its forward value eagerly and,
// when a tape is recording, registers a closure that accumulates input
// gradients from the output gradient. Reduction orders are fixed, so results
// are bit-reproducible for identical inputs.

#include <cmath>
#include <numbers>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "dmnet/tensor.hpp"

namespace dmnet {

using detail::require;

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  BasicTensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  detail::record<T>("add", {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    for (auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gi = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
  return out;
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  BasicTensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  detail::record<T>("sub", {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  BasicTensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  detail::record<T>("mul", {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
  return out;
}

/// x * k for a constant k.
template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T k) {
  BasicTensor<T> out(a.shape());
  auto x = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * k;
  detail::record<T>("scale", {a}, out, [a, out, k]() mutable {
    auto g = out.grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * k;
  });
  return out;
}

/// x * s where s is a one-element tensor broadcast over x.
template <class T>
BasicTensor<T> scale_by(const BasicTensor<T>& a, const BasicTensor<T>& s) {
  require(s.numel() == 1, "scale_by: factor must have one element, got " + s.shape().str());
  const T k = s.data()[0];
  BasicTensor<T> out(a.shape());
  auto x = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * k;
  detail::record<T>("scale_by", {a, s}, out, [a, s, out]() mutable {
    auto g = out.grad();
    auto x = a.data();
    const T k = s.data()[0];
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * k;
    }
    if (s.requires_grad()) {
      T acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
      s.grad_buffer()[0] += acc;
    }
  });
  return out;
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  BasicTensor<T> out(a.shape());
  auto x = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(x[i]);
  detail::record<T>("exp", {a}, out, [a, out]() mutable {
    auto g = out.grad();
    auto y = out.data();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
  return out;
}

/// Exact (erf-based) GELU.
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  BasicTensor<T> out(a.shape());
  auto x = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  detail::record<T>("gelu", {a}, out, [a, out]() mutable {
    constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    auto g = out.grad();
    auto x = a.data();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
      ga[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double acc = 0;
  for (T v : a.data()) acc += v;
  auto out = BasicTensor<T>::scalar(static_cast<T>(acc));
  detail::record<T>("sum", {a}, out, [a, out]() mutable {
    const T g = out.grad()[0];
    for (T& gi : a.grad_buffer()) gi += g;
  });
  return out;
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  require(a.numel() > 0, "mean: empty tensor");
  double acc = 0;
  for (T v : a.data()) acc += v;
  auto out = BasicTensor<T>::scalar(static_cast<T>(acc / static_cast<double>(a.numel())));
  detail::record<T>("mean", {a}, out, [a, out]() mutable {
    const T g = out.grad()[0] / static_cast<T>(a.numel());
    for (T& gi : a.grad_buffer()) gi += g;
  });
  return out;
}

/// mean(|a - b|). The subgradient at a == b is taken as zero.
template <class T>
BasicTensor<T> mean_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(),
          "mean_abs_diff: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  require(a.numel() > 0, "mean_abs_diff: empty tensor");
  auto x = a.data(), y = b.data();
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(static_cast<double>(x[i]) - y[i]);
  auto out = BasicTensor<T>::scalar(static_cast<T>(acc / static_cast<double>(a.numel())));
  detail::record<T>("mean_abs_diff", {a, b}, out, [a, b, out]() mutable {
    const T g = out.grad()[0] / static_cast<T>(a.numel());
    auto x = a.data(), y = b.data();
    auto sgn = [](T d) { return d > 0 ? T(1) : (d < 0 ? T(-1) : T(0)); };
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * sgn(x[i] - y[i]);
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < x.size(); ++i) gb[i] -= g * sgn(x[i] - y[i]);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Channel slicing

template <class T>
BasicTensor<T> slice_channels(const BasicTensor<T>& a, std::size_t start, std::size_t count) {
  const Shape s = a.shape();
  require(start + count <= s.c, "slice_channels: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") exceeds channels " +
                                    std::to_string(s.c));
  BasicTensor<T> out(Shape{s.n, count, s.h, s.w});
  const std::size_t hw = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = a.ptr() + (n * s.c + start) * hw;
    std::copy(src, src + count * hw, out.ptr() + n * count * hw);
  }
  detail::record<T>("slice_channels", {a}, out, [a, out, start, count]() mutable {
    const Shape s = a.shape();
    const std::size_t hw = s.plane();
    auto g = out.grad();
    auto ga = a.grad_buffer();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < count * hw; ++i)
        ga[(n * s.c + start) * hw + i] += g[n * count * hw + i];
  });
  return out;
}

template <class T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Shape s0 = parts.front().shape();
  std::size_t c = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    require(s.n == s0.n && s.h == s0.h && s.w == s0.w,
            "concat_channels: batch/spatial mismatch " + s.str() + " vs " + s0.str());
    c += s.c;
  }
  BasicTensor<T> out(Shape{s0.n, c, s0.h, s0.w});
  const std::size_t hw = s0.plane();
  for (std::size_t n = 0; n < s0.n; ++n) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p.shape().c;
      const T* src = p.ptr() + n * pc * hw;
      std::copy(src, src + pc * hw, out.ptr() + (n * c + off) * hw);
      off += pc;
    }
  }
  detail::record<T>("concat_channels", parts, out, [parts, out]() mutable {
    const Shape so = out.shape();
    const std::size_t hw = so.plane();
    auto g = out.grad();
    std::size_t off = 0;
    for (auto& p : parts) {
      const std::size_t pc = p.shape().c;
      if (p.requires_grad()) {
        auto gp = p.grad_buffer();
        for (std::size_t n = 0; n < so.n; ++n)
          for (std::size_t i = 0; i < pc * hw; ++i) gp[n * pc * hw + i] += g[(n * so.c + off) * hw + i];
      }
      off += pc;
    }
  });
  return out;
}

/// Splits along channels into `k` equal parts.
template <class T>
std::vector<BasicTensor<T>> chunk_channels(const BasicTensor<T>& a, std::size_t k) {
  require(k > 0 && a.shape().c % k == 0,
          "chunk_channels: " + std::to_string(a.shape().c) + " channels not divisible by " +
              std::to_string(k));
  const std::size_t each = a.shape().c / k;
  std::vector<BasicTensor<T>> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(slice_channels(a, i * each, each));
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// 2-D cross-correlation with zero padding. weight is (co, ci/groups, kh, kw).
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::optional<std::type_identity_t<BasicTensor<T>>>& bias, Conv2dParams p = {}) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  const std::size_t co = ws.n, kh = ws.h, kw = ws.w, g = p.groups;
  require(g >= 1, "conv2d: groups must be >= 1");
  require(p.stride >= 1, "conv2d: stride must be >= 1");
  require(is.c % g == 0, "conv2d: input channels " + std::to_string(is.c) +
                             " not divisible by groups " + std::to_string(g));
  require(co % g == 0, "conv2d: output channels " + std::to_string(co) +
                           " not divisible by groups " + std::to_string(g));
  require(ws.c == is.c / g, "conv2d: weight in-channels " + std::to_string(ws.c) +
                                " != input channels / groups = " + std::to_string(is.c / g));
  require(is.h + 2 * p.padding >= kh && is.w + 2 * p.padding >= kw,
          "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
              " larger than padded input height/width " + is.str());
  if (bias) {
    require(bias->numel() == co, "conv2d: bias length " + std::to_string(bias->numel()) +
                                     " != output channels " + std::to_string(co));
  }
  const std::size_t oh = (is.h + 2 * p.padding - kh) / p.stride + 1;
  const std::size_t ow = (is.w + 2 * p.padding - kw) / p.stride + 1;
  const std::size_t cig = is.c / g, cog = co / g;
  BasicTensor<T> out(Shape{is.n, co, oh, ow});

  // For each (ky|kx) the valid output range along one axis.
  auto range = [p](std::size_t k, std::size_t in_len, std::size_t out_len) {
    // ix = o*stride + k - pad in [0, in_len)
    const long pad = static_cast<long>(p.padding), st = static_cast<long>(p.stride);
    long lo = 0, hi = static_cast<long>(out_len);
    const long off = static_cast<long>(k) - pad;
    while (lo < hi && lo * st + off < 0) ++lo;
    while (hi > lo && (hi - 1) * st + off >= static_cast<long>(in_len)) --hi;
    return std::pair<std::size_t, std::size_t>(lo, hi);
  };
  const bool pointwise = kh == 1 && kw == 1 && p.stride == 1 && p.padding == 0;

  const T* in = input.ptr();
  const T* wt = weight.ptr();
  T* o = out.ptr();
  const std::size_t ihw = is.plane(), ohw = oh * ow;
  for (std::size_t n = 0; n < is.n; ++n) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      T* op = o + (n * co + oc) * ohw;
      const T b0 = bias ? bias->data()[oc] : T(0);
      std::fill(op, op + ohw, b0);
      const std::size_t grp = oc / cog;
      for (std::size_t icl = 0; icl < cig; ++icl) {
        const T* ip = in + (n * is.c + grp * cig + icl) * ihw;
        const T* wp = wt + (oc * cig + icl) * kh * kw;
        if (pointwise) {
          const T wv = wp[0];
          for (std::size_t i = 0; i < ohw; ++i) op[i] += wv * ip[i];
          continue;
        }
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto [ylo, yhi] = range(ky, is.h, oh);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto [xlo, xhi] = range(kx, is.w, ow);
            const T wv = wp[ky * kw + kx];
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const std::size_t iy = oy * p.stride + ky - p.padding;
              const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(iy * is.w + kx) -
                                          static_cast<std::ptrdiff_t>(p.padding);
              T* orow = op + oy * ow;
              if (p.stride == 1) {
                for (std::size_t ox = xlo; ox < xhi; ++ox) orow[ox] += wv * ip[base + ox];
              } else {
                for (std::size_t ox = xlo; ox < xhi; ++ox) orow[ox] += wv * ip[base + ox * p.stride];
              }
            }
          }
        }
      }
    }
  }

  std::vector<BasicTensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  detail::record<T>("conv2d", std::move(inputs), out,
                    [input, weight, bias, out, p, range, pointwise, oh, ow, cig, cog]() mutable {
    const Shape is = input.shape();
    const Shape ws = weight.shape();
    const std::size_t co = ws.n, kh = ws.h, kw = ws.w;
    const std::size_t ihw = is.plane(), ohw = oh * ow;
    const T* go = out.grad().data();
    const T* in = input.ptr();
    const T* wt = weight.ptr();
    T* gi = input.requires_grad() ? input.grad_buffer().data() : nullptr;
    T* gw = weight.requires_grad() ? weight.grad_buffer().data() : nullptr;
    if (bias && bias->requires_grad()) {
      auto gb = bias->grad_buffer();
      for (std::size_t n = 0; n < is.n; ++n)
        for (std::size_t oc = 0; oc < co; ++oc) {
          const T* gp = go + (n * co + oc) * ohw;
          T acc = 0;
          for (std::size_t i = 0; i < ohw; ++i) acc += gp[i];
          gb[oc] += acc;
        }
    }
    for (std::size_t n = 0; n < is.n; ++n) {
      for (std::size_t oc = 0; oc < co; ++oc) {
        const T* gp = go + (n * co + oc) * ohw;
        const std::size_t grp = oc / cog;
        for (std::size_t icl = 0; icl < cig; ++icl) {
          const std::size_t ic = grp * cig + icl;
          const T* ip = in + (n * is.c + ic) * ihw;
          T* gip = gi ? gi + (n * is.c + ic) * ihw : nullptr;
          const T* wp = wt + (oc * cig + icl) * kh * kw;
          T* gwp = gw ? gw + (oc * cig + icl) * kh * kw : nullptr;
          if (pointwise) {
            if (gip) {
              const T wv = wp[0];
              for (std::size_t i = 0; i < ohw; ++i) gip[i] += wv * gp[i];
            }
            if (gwp) {
              T acc = 0;
              for (std::size_t i = 0; i < ohw; ++i) acc += gp[i] * ip[i];
              gwp[0] += acc;
            }
            continue;
          }
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const auto [ylo, yhi] = range(ky, is.h, oh);
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const auto [xlo, xhi] = range(kx, is.w, ow);
              const T wv = wp[ky * kw + kx];
              T acc = 0;
              for (std::size_t oy = ylo; oy < yhi; ++oy) {
                const std::size_t iy = oy * p.stride + ky - p.padding;
                const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(iy * is.w + kx) -
                                            static_cast<std::ptrdiff_t>(p.padding);
                const T* grow = gp + oy * ow;
                if (gip) {
                  for (std::size_t ox = xlo; ox < xhi; ++ox) gip[base + ox * p.stride] += wv * grow[ox];
                }
                if (gwp) {
                  for (std::size_t ox = xlo; ox < xhi; ++ox) acc += grow[ox] * ip[base + ox * p.stride];
                }
              }
              if (gwp) gwp[ky * kw + kx] += acc;
            }
          }
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

inline constexpr double kLayerNormEps = 1e-6;

/// Layer normalization across the channel axis at every spatial location.
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(kLayerNormEps)) {
  const Shape s = x.shape();
  require(s.c > 0, "layer_norm: channel count must be positive");
  require(gamma.numel() == s.c && beta.numel() == s.c,
          "layer_norm: gamma/beta length must equal channels " + std::to_string(s.c));
  const std::size_t hw = s.plane(), C = s.c;
  BasicTensor<T> out(s);
  std::vector<T> mu(s.n * hw), rstd(s.n * hw);
  const T inv_c = T(1) / static_cast<T>(C);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* xp = x.ptr() + n * C * hw;
    T* m = mu.data() + n * hw;
    T* r = rstd.data() + n * hw;
    std::fill(m, m + hw, T(0));
    std::fill(r, r + hw, T(0));
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < hw; ++i) m[i] += xp[c * hw + i];
    for (std::size_t i = 0; i < hw; ++i) m[i] *= inv_c;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < hw; ++i) {
        const T d = xp[c * hw + i] - m[i];
        r[i] += d * d;
      }
    for (std::size_t i = 0; i < hw; ++i) r[i] = T(1) / std::sqrt(r[i] * inv_c + eps);
    T* op = out.ptr() + n * C * hw;
    for (std::size_t c = 0; c < C; ++c) {
      const T gm = gamma.data()[c], bt = beta.data()[c];
      for (std::size_t i = 0; i < hw; ++i) op[c * hw + i] = (xp[c * hw + i] - m[i]) * r[i] * gm + bt;
    }
  }
  detail::record<T>("layer_norm", {x, gamma, beta}, out,
                    [x, gamma, beta, out, mu = std::move(mu), rstd = std::move(rstd)]() mutable {
    const Shape s = x.shape();
    const std::size_t hw = s.plane(), C = s.c;
    const T inv_c = T(1) / static_cast<T>(C);
    auto go = out.grad();
    T* gg = gamma.requires_grad() ? gamma.grad_buffer().data() : nullptr;
    T* gb = beta.requires_grad() ? beta.grad_buffer().data() : nullptr;
    T* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
    std::vector<T> sum_d(hw), sum_dx(hw);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* xp = x.ptr() + n * C * hw;
      const T* gp = go.data() + n * C * hw;
      const T* m = mu.data() + n * hw;
      const T* r = rstd.data() + n * hw;
      std::fill(sum_d.begin(), sum_d.end(), T(0));
      std::fill(sum_dx.begin(), sum_dx.end(), T(0));
      for (std::size_t c = 0; c < C; ++c) {
        const T gm = gamma.data()[c];
        T accg = 0, accb = 0;
        for (std::size_t i = 0; i < hw; ++i) {
          const T xh = (xp[c * hw + i] - m[i]) * r[i];
          const T d = gp[c * hw + i] * gm;
          sum_d[i] += d;
          sum_dx[i] += d * xh;
          accg += gp[c * hw + i] * xh;
          accb += gp[c * hw + i];
        }
        if (gg) gg[c] += accg;
        if (gb) gb[c] += accb;
      }
      if (!gx) continue;
      T* gxp = gx + n * C * hw;
      for (std::size_t c = 0; c < C; ++c) {
        const T gm = gamma.data()[c];
        for (std::size_t i = 0; i < hw; ++i) {
          const T xh = (xp[c * hw + i] - m[i]) * r[i];
          const T d = gp[c * hw + i] * gm;
          gxp[c * hw + i] += r[i] * (d - sum_d[i] * inv_c - xh * sum_dx[i] * inv_c);
        }
      }
    }
  });
  return out;
}

/// Scales each (n, c) plane to unit L2 norm: x / max(|x|, eps).
template <class T>
BasicTensor<T> normalize_planes(const BasicTensor<T>& x, T eps = T(1e-12)) {
  const Shape s = x.shape();
  const std::size_t hw = s.plane(), rows = s.n * s.c;
  BasicTensor<T> out(s);
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xp = x.ptr() + r * hw;
    T acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += xp[i] * xp[i];
    const T nrm = std::max(std::sqrt(acc), eps);
    norms[r] = nrm;
    T* op = out.ptr() + r * hw;
    for (std::size_t i = 0; i < hw; ++i) op[i] = xp[i] / nrm;
  }
  detail::record<T>("normalize_planes", {x}, out, [x, out, eps, norms = std::move(norms)]() mutable {
    const Shape s = x.shape();
    const std::size_t hw = s.plane(), rows = s.n * s.c;
    auto go = out.grad();
    auto gx = x.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yp = out.ptr() + r * hw;
      const T* gp = go.data() + r * hw;
      T* gxp = gx.data() + r * hw;
      if (norms[r] <= eps) {
        for (std::size_t i = 0; i < hw; ++i) gxp[i] += gp[i] / eps;
        continue;
      }
      T dot = 0;
      for (std::size_t i = 0; i < hw; ++i) dot += yp[i] * gp[i];
      for (std::size_t i = 0; i < hw; ++i) gxp[i] += (gp[i] - yp[i] * dot) / norms[r];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax

enum class Axis { channel, width };

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, Axis axis) {
  const Shape s = x.shape();
  // Lines of `len` elements spaced `stride` apart.
  std::size_t len, stride;
  std::vector<std::size_t> starts;
  if (axis == Axis::width) {
    len = s.w;
    stride = 1;
    for (std::size_t r = 0; r < s.n * s.c * s.h; ++r) starts.push_back(r * s.w);
  } else {
    len = s.c;
    stride = s.plane();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) starts.push_back(n * s.c * s.plane() + i);
  }
  require(len > 0, "softmax: empty axis");
  BasicTensor<T> out(s);
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (std::size_t st : starts) {
    T mx = xp[st];
    for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xp[st + k * stride]);
    T z = 0;
    for (std::size_t k = 0; k < len; ++k) {
      const T e = std::exp(xp[st + k * stride] - mx);
      op[st + k * stride] = e;
      z += e;
    }
    for (std::size_t k = 0; k < len; ++k) op[st + k * stride] /= z;
  }
  detail::record<T>("softmax", {x}, out, [x, out, len, stride, starts = std::move(starts)]() mutable {
    const T* yp = out.ptr();
    const T* gp = out.grad().data();
    T* gx = x.grad_buffer().data();
    for (std::size_t st : starts) {
      T dot = 0;
      for (std::size_t k = 0; k < len; ++k) dot += yp[st + k * stride] * gp[st + k * stride];
      for (std::size_t k = 0; k < len; ++k)
        gx[st + k * stride] += yp[st + k * stride] * (gp[st + k * stride] - dot);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products over (channel x space) views.
//
// A tensor (n, c, h, w) is read as n matrices of c rows and h*w columns.

/// G = A B^T per batch item: (n, ca, h, w) x (n, cb, h, w) -> (n, 1, ca, cb).
template <class T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  require(sa.n == sb.n && sa.plane() == sb.plane(),
          "matmul_nt: batch or spatial size mismatch " + sa.str() + " vs " + sb.str());
  const std::size_t K = sa.plane(), M = sa.c, N = sb.c;
  BasicTensor<T> out(Shape{sa.n, 1, M, N});
  for (std::size_t n = 0; n < sa.n; ++n)
    for (std::size_t i = 0; i < M; ++i) {
      const T* ap = a.ptr() + (n * M + i) * K;
      for (std::size_t j = 0; j < N; ++j) {
        const T* bp = b.ptr() + (n * N + j) * K;
        T acc = 0;
        for (std::size_t k = 0; k < K; ++k) acc += ap[k] * bp[k];
        out.ptr()[(n * M + i) * N + j] = acc;
      }
    }
  detail::record<T>("matmul_nt", {a, b}, out, [a, b, out]() mutable {
    const Shape sa = a.shape(), sb = b.shape();
    const std::size_t K = sa.plane(), M = sa.c, N = sb.c;
    const T* g = out.grad().data();
    T* ga = a.requires_grad() ? a.grad_buffer().data() : nullptr;
    T* gb = b.requires_grad() ? b.grad_buffer().data() : nullptr;
    for (std::size_t n = 0; n < sa.n; ++n)
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const T gij = g[(n * M + i) * N + j];
          if (ga) {
            const T* bp = b.ptr() + (n * N + j) * K;
            T* gap = ga + (n * M + i) * K;
            for (std::size_t k = 0; k < K; ++k) gap[k] += gij * bp[k];
          }
          if (gb) {
            const T* ap = a.ptr() + (n * M + i) * K;
            T* gbp = gb + (n * N + j) * K;
            for (std::size_t k = 0; k < K; ++k) gbp[k] += gij * ap[k];
          }
        }
  });
  return out;
}

/// Y = A V per batch item: (n, 1, m, c) x (n, c, h, w) -> (n, m, h, w).
template <class T>
BasicTensor<T> matmul_nn(const BasicTensor<T>& a, const BasicTensor<T>& v) {
  const Shape sa = a.shape(), sv = v.shape();
  require(sa.c == 1 && sa.n == sv.n && sa.w == sv.c,
          "matmul_nn: expected (n,1,m,c) x (n,c,h,w), got " + sa.str() + " x " + sv.str());
  const std::size_t M = sa.h, C = sv.c, K = sv.plane();
  BasicTensor<T> out(Shape{sv.n, M, sv.h, sv.w});
  for (std::size_t n = 0; n < sv.n; ++n)
    for (std::size_t i = 0; i < M; ++i) {
      T* op = out.ptr() + (n * M + i) * K;
      for (std::size_t j = 0; j < C; ++j) {
        const T aij = a.ptr()[(n * M + i) * C + j];
        const T* vp = v.ptr() + (n * C + j) * K;
        for (std::size_t k = 0; k < K; ++k) op[k] += aij * vp[k];
      }
    }
  detail::record<T>("matmul_nn", {a, v}, out, [a, v, out]() mutable {
    const Shape sa = a.shape(), sv = v.shape();
    const std::size_t M = sa.h, C = sv.c, K = sv.plane();
    const T* g = out.grad().data();
    T* ga = a.requires_grad() ? a.grad_buffer().data() : nullptr;
    T* gv = v.requires_grad() ? v.grad_buffer().data() : nullptr;
    for (std::size_t n = 0; n < sv.n; ++n)
      for (std::size_t i = 0; i < M; ++i) {
        const T* gp = g + (n * M + i) * K;
        for (std::size_t j = 0; j < C; ++j) {
          const T* vp = v.ptr() + (n * C + j) * K;
          if (ga) {
            T acc = 0;
            for (std::size_t k = 0; k < K; ++k) acc += gp[k] * vp[k];
            ga[(n * M + i) * C + j] += acc;
          }
          if (gv) {
            const T aij = a.ptr()[(n * M + i) * C + j];
            T* gvp = gv + (n * C + j) * K;
            for (std::size_t k = 0; k < K; ++k) gvp[k] += aij * gp[k];
          }
        }
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sub-pixel rearrangement

/// (n, c*s*s, h, w) -> (n, c, h*s, w*s); channel c*s*s + i*s + j lands at
/// spatial offset (i, j) of each s x s cell.
template <class T>
BasicTensor<T> pixel_shuffle(const BasicTensor<T>& x, std::size_t s) {
  const Shape is = x.shape();
  require(s >= 1, "pixel_shuffle: factor must be >= 1");
  require(is.c % (s * s) == 0, "pixel_shuffle: channels " + std::to_string(is.c) +
                                   " not divisible by factor^2 = " + std::to_string(s * s));
  const std::size_t c = is.c / (s * s);
  const Shape os{is.n, c, is.h * s, is.w * s};
  BasicTensor<T> out(os);
  auto index = [=](std::size_t n, std::size_t ch, std::size_t y, std::size_t xx) {
    const std::size_t ic = ch * s * s + (y % s) * s + (xx % s);
    return ((n * is.c + ic) * is.h + y / s) * is.w + xx / s;
  };
  for (std::size_t n = 0; n < os.n; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t xx = 0; xx < os.w; ++xx)
          out.at(n, ch, y, xx) = x.ptr()[index(n, ch, y, xx)];
  detail::record<T>("pixel_shuffle", {x}, out, [x, out, index]() mutable {
    const Shape os = out.shape();
    auto g = out.grad();
    auto gx = x.grad_buffer();
    std::size_t o = 0;
    for (std::size_t n = 0; n < os.n; ++n)
      for (std::size_t ch = 0; ch < os.c; ++ch)
        for (std::size_t y = 0; y < os.h; ++y)
          for (std::size_t xx = 0; xx < os.w; ++xx) gx[index(n, ch, y, xx)] += g[o++];
  });
  return out;
}

/// Inverse of pixel_shuffle: (n, c, h*s, w*s) -> (n, c*s*s, h, w).
template <class T>
BasicTensor<T> pixel_unshuffle(const BasicTensor<T>& x, std::size_t s) {
  const Shape is = x.shape();
  require(s >= 1 && is.h % s == 0 && is.w % s == 0,
          "pixel_unshuffle: spatial size " + is.str() + " not divisible by " + std::to_string(s));
  const Shape os{is.n, is.c * s * s, is.h / s, is.w / s};
  BasicTensor<T> out(os);
  auto index = [=](std::size_t n, std::size_t oc, std::size_t y, std::size_t xx) {
    const std::size_t ch = oc / (s * s), i = (oc / s) % s, j = oc % s;
    return ((n * is.c + ch) * is.h + y * s + i) * is.w + xx * s + j;
  };
  for (std::size_t n = 0; n < os.n; ++n)
    for (std::size_t oc = 0; oc < os.c; ++oc)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t xx = 0; xx < os.w; ++xx) out.at(n, oc, y, xx) = x.ptr()[index(n, oc, y, xx)];
  detail::record<T>("pixel_unshuffle", {x}, out, [x, out, index]() mutable {
    const Shape os = out.shape();
    auto g = out.grad();
    auto gx = x.grad_buffer();
    std::size_t o = 0;
    for (std::size_t n = 0; n < os.n; ++n)
      for (std::size_t oc = 0; oc < os.c; ++oc)
        for (std::size_t y = 0; y < os.h; ++y)
          for (std::size_t xx = 0; xx < os.w; ++xx) gx[index(n, oc, y, xx)] += g[o++];
  });
  return out;
}

}  // namespace dmnet
