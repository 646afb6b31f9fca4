#pragma once

// Straight-line double-precision re-implementation of the network, written
// with plain loops over single images. Used only as a test oracle.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "dmnet/model.hpp"

namespace dmnet::ref {

struct Img {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> v;

  Img() = default;
  Img(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, 0.0) {}
  double& operator()(std::size_t ch, std::size_t y, std::size_t x) { return v[(ch * h + y) * w + x]; }
  double operator()(std::size_t ch, std::size_t y, std::size_t x) const { return v[(ch * h + y) * w + x]; }
};

inline Img from_tensor(const Tensor64& t, std::size_t n = 0) {
  const Shape s = t.shape();
  Img out(s.c, s.h, s.w);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) out(c, y, x) = t.at(n, c, y, x);
  return out;
}

inline Img conv(const Img& in, const ConvLayer<double>& layer) {
  const Shape ws = layer.weight.shape();
  const std::size_t co = ws.n, k = ws.h, g = layer.params.groups, pad = k / 2;
  const std::size_t cig = in.c / g, cog = co / g;
  Img out(co, in.h, in.w);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < in.h; ++y)
      for (std::size_t x = 0; x < in.w; ++x) {
        double acc = layer.bias ? layer.bias->data()[o] : 0.0;
        for (std::size_t ci = 0; ci < cig; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = long(y + ky) - long(pad), ix = long(x + kx) - long(pad);
              if (iy < 0 || ix < 0 || iy >= long(in.h) || ix >= long(in.w)) continue;
              acc += in((o / cog) * cig + ci, iy, ix) * layer.weight.at(o, ci, ky, kx);
            }
        out(o, y, x) = acc;
      }
  return out;
}

inline Img layer_norm(const Img& in, const LayerNormParams<double>& p) {
  Img out(in.c, in.h, in.w);
  for (std::size_t y = 0; y < in.h; ++y)
    for (std::size_t x = 0; x < in.w; ++x) {
      double mean = 0, var = 0;
      for (std::size_t c = 0; c < in.c; ++c) mean += in(c, y, x);
      mean /= double(in.c);
      for (std::size_t c = 0; c < in.c; ++c) var += (in(c, y, x) - mean) * (in(c, y, x) - mean);
      var /= double(in.c);
      for (std::size_t c = 0; c < in.c; ++c)
        out(c, y, x) = (in(c, y, x) - mean) / std::sqrt(var + 1e-6) * p.gamma.data()[c] + p.beta.data()[c];
    }
  return out;
}

inline Img plus(const Img& a, const Img& b) {
  Img out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

inline Img times(const Img& a, const Img& b) {
  Img out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

// Subband stack [LL, LH, HL, HH] at half resolution.
inline Img haar(const Img& in) {
  Img out(4 * in.c, in.h / 2, in.w / 2);
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t i = 0; i < in.h / 2; ++i)
      for (std::size_t j = 0; j < in.w / 2; ++j) {
        const double a = in(c, 2 * i, 2 * j), b = in(c, 2 * i, 2 * j + 1);
        const double d = in(c, 2 * i + 1, 2 * j), e = in(c, 2 * i + 1, 2 * j + 1);
        out(c, i, j) = (a + b + d + e) / 2;
        out(in.c + c, i, j) = (a - b + d - e) / 2;
        out(2 * in.c + c, i, j) = (a + b - d - e) / 2;
        out(3 * in.c + c, i, j) = (a - b - d + e) / 2;
      }
  return out;
}

inline Img ihaar(const Img& in) {
  const std::size_t c0 = in.c / 4;
  Img out(c0, 2 * in.h, 2 * in.w);
  for (std::size_t c = 0; c < c0; ++c)
    for (std::size_t i = 0; i < in.h; ++i)
      for (std::size_t j = 0; j < in.w; ++j) {
        const double ll = in(c, i, j), lh = in(c0 + c, i, j), hl = in(2 * c0 + c, i, j),
                     hh = in(3 * c0 + c, i, j);
        out(c, 2 * i, 2 * j) = (ll + lh + hl + hh) / 2;
        out(c, 2 * i, 2 * j + 1) = (ll - lh + hl - hh) / 2;
        out(c, 2 * i + 1, 2 * j) = (ll + lh - hl - hh) / 2;
        out(c, 2 * i + 1, 2 * j + 1) = (ll - lh - hl + hh) / 2;
      }
  return out;
}

// Stacked [re; im] of the unnormalized DFT of every plane, by definition.
inline Img dft(const Img& in) {
  Img out(2 * in.c, in.h, in.w);
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t u = 0; u < in.h; ++u)
      for (std::size_t v = 0; v < in.w; ++v) {
        std::complex<double> acc = 0;
        for (std::size_t y = 0; y < in.h; ++y)
          for (std::size_t x = 0; x < in.w; ++x) {
            const double t = -2 * std::numbers::pi * (double(u * y) / in.h + double(v * x) / in.w);
            acc += in(c, y, x) * std::complex<double>(std::cos(t), std::sin(t));
          }
        out(c, u, v) = acc.real();
        out(in.c + c, u, v) = acc.imag();
      }
  return out;
}

// Real part of the normalized inverse DFT of a stacked [re; im] spectrum.
inline Img idft_real(const Img& in) {
  const std::size_t c0 = in.c / 2;
  Img out(c0, in.h, in.w);
  for (std::size_t c = 0; c < c0; ++c)
    for (std::size_t y = 0; y < in.h; ++y)
      for (std::size_t x = 0; x < in.w; ++x) {
        double acc = 0;
        for (std::size_t u = 0; u < in.h; ++u)
          for (std::size_t v = 0; v < in.w; ++v) {
            const double t = 2 * std::numbers::pi * (double(u * y) / in.h + double(v * x) / in.w);
            acc += in(c, u, v) * std::cos(t) - in(c0 + c, u, v) * std::sin(t);
          }
        out(c, y, x) = acc / double(in.h * in.w);
      }
  return out;
}

inline Img attention(const Img& qkv, double log_alpha) {
  const std::size_t C = qkv.c / 3, N = qkv.h * qkv.w;
  auto row = [&](std::size_t part, std::size_t c) { return &qkv.v[(part * C + c) * N]; };
  std::vector<double> qn(C * N), kn(C * N);
  for (std::size_t c = 0; c < C; ++c) {
    double nq = 0, nk = 0;
    for (std::size_t i = 0; i < N; ++i) {
      nq += row(0, c)[i] * row(0, c)[i];
      nk += row(1, c)[i] * row(1, c)[i];
    }
    nq = std::max(std::sqrt(nq), 1e-12);
    nk = std::max(std::sqrt(nk), 1e-12);
    for (std::size_t i = 0; i < N; ++i) {
      qn[c * N + i] = row(0, c)[i] / nq;
      kn[c * N + i] = row(1, c)[i] / nk;
    }
  }
  Img out(C, qkv.h, qkv.w);
  for (std::size_t a = 0; a < C; ++a) {
    std::vector<double> logits(C);
    double mx = -1e300;
    for (std::size_t b = 0; b < C; ++b) {
      double dot = 0;
      for (std::size_t i = 0; i < N; ++i) dot += qn[a * N + i] * kn[b * N + i];
      logits[b] = dot / std::exp(log_alpha);
      mx = std::max(mx, logits[b]);
    }
    double z = 0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t i = 0; i < N; ++i) {
      double acc = 0;
      for (std::size_t b = 0; b < C; ++b) acc += logits[b] / z * row(2, b)[i];
      out.v[a * N + i] = acc;
    }
  }
  return out;
}

inline Img sma(const Img& x, const SMAWeights<double>& w) {
  return conv(attention(conv(conv(x, w.pw), w.dw), w.log_alpha.item()), w.proj);
}

inline Img wma(const Img& x, const WMAWeights<double>& w, const AblationToggles& ab) {
  const Img r = conv(x, w.reduce);
  const Img f = ab.domain == FreqDomain::wavelet ? haar(r) : dft(r);
  Img a = attention(conv(conv(f, w.pw), w.dw), w.log_alpha.item());
  if (w.dyn) a = times(a, conv(f, *w.dyn));
  return conv(ab.domain == FreqDomain::wavelet ? ihaar(a) : idft_real(a), w.expand);
}

inline Img ffn(const Img& x, const FFNWeights<double>& w) {
  const Img e = conv(conv(x, w.expand), w.dw);
  const std::size_t hid = e.c / 2, n = e.h * e.w;
  Img g(hid, e.h, e.w);
  for (std::size_t i = 0; i < hid * n; ++i) {
    const double a = e.v[i], b = e.v[hid * n + i];
    g.v[i] = 0.5 * a * (1 + std::erf(a / std::numbers::sqrt2)) * b;
  }
  return conv(g, w.project);
}

inline Img smt(const Img& x, const SMTWeights<double>& w) {
  const Img mid = plus(sma(layer_norm(x, w.norm1), w.attn), x);
  return plus(ffn(layer_norm(mid, w.norm2), w.ffn), mid);
}

inline Img wmt(const Img& x, const WMTWeights<double>& w, const AblationToggles& ab) {
  const Img mid = plus(wma(layer_norm(x, w.norm1), w.attn, ab), x);
  return plus(ffn(layer_norm(mid, w.norm2), w.ffn), mid);
}

inline Img dmnet(const DMNetConfig& cfg, const DMNetWeights<double>& w, const Img& lr) {
  const Img f0 = conv(lr, w.head);
  Img feat = f0;
  for (const auto& grp : w.groups) {
    Img x = feat;
    for (const auto& blk : grp.blocks) x = wmt(smt(x, blk.smt), blk.wmt, cfg.ablation);
    feat = plus(conv(x, grp.conv), feat);
  }
  const Img t = conv(plus(feat, f0), w.tail);
  const std::size_t s = cfg.scale;
  Img out(3, lr.h * s, lr.w * s);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t x = 0; x < out.w; ++x) out(c, y, x) = t(c * s * s + (y % s) * s + x % s, y / s, x / s);
  return out;
}

}  // namespace dmnet::ref
