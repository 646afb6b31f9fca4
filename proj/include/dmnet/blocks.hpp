#pragma once

// Learned blocks: spatial-domain modulation attention (SMA), wavelet-domain
// modulation attention (WMA), the gated depthwise feed-forward network, and
// the pre-norm residual wrappers SMT / WMT built from them.
//
// Both attentions are single-head channel attentions: Q, K, V are C x N
// matrices (N spatial positions), Q and K rows are L2-normalized, and the
// output is softmax(Q K^T / alpha) V with alpha = exp(log_alpha).

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dmnet/fourier.hpp"
#include "dmnet/ops.hpp"
#include "dmnet/random.hpp"
#include "dmnet/wavelet.hpp"

namespace dmnet {

enum class FreqDomain { wavelet, fourier };
enum class FreqLoss { fourier, wavelet };

struct AblationToggles {
  bool dynamic = true;
  FreqDomain domain = FreqDomain::wavelet;
  FreqLoss loss = FreqLoss::fourier;

  bool operator==(const AblationToggles&) const = default;
};

inline constexpr double kInitStd = 0.02;
inline constexpr std::size_t kDynamicKernel = 7;

template <class T>
using ParamVisitor = std::function<void(const std::string&, BasicTensor<T>&)>;

// ---------------------------------------------------------------------------
// Parameter holders

template <class T>
struct ConvLayer {
  BasicTensor<T> weight;
  std::optional<BasicTensor<T>> bias;
  Conv2dParams params;

  static ConvLayer make(std::size_t ci, std::size_t co, std::size_t k, std::size_t groups,
                        bool with_bias, Rng& rng) {
    ConvLayer c;
    c.weight = BasicTensor<T>(Shape{co, ci / groups, k, k});
    for (T& v : c.weight.data()) v = static_cast<T>(rng.truncated_normal(kInitStd));
    if (with_bias) c.bias = BasicTensor<T>(Shape{co, 1, 1, 1});
    c.params = Conv2dParams{1, k / 2, groups};
    return c;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return conv2d(x, weight, bias, params); }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(prefix + ".weight", weight);
    if (bias) f(prefix + ".bias", *bias);
  }
};

template <class T>
struct LayerNormParams {
  BasicTensor<T> gamma, beta;

  static LayerNormParams make(std::size_t c) {
    return {BasicTensor<T>(Shape{c, 1, 1, 1}, T(1)), BasicTensor<T>(Shape{c, 1, 1, 1})};
  }
  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gamma, beta); }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

template <class T>
struct SMAWeights {
  ConvLayer<T> pw;    // 1x1, C -> 3C
  ConvLayer<T> dw;    // 3x3 depthwise on 3C
  BasicTensor<T> log_alpha;
  ConvLayer<T> proj;  // 1x1, C -> C

  static SMAWeights make(std::size_t c, Rng& rng) {
    SMAWeights w;
    w.pw = ConvLayer<T>::make(c, 3 * c, 1, 1, true, rng);
    w.dw = ConvLayer<T>::make(3 * c, 3 * c, 3, 3 * c, true, rng);
    w.log_alpha = BasicTensor<T>::scalar(T(0));
    w.proj = ConvLayer<T>::make(c, c, 1, 1, true, rng);
    return w;
  }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    pw.visit(prefix + ".pw", f);
    dw.visit(prefix + ".dw", f);
    f(prefix + ".log_alpha", log_alpha);
    proj.visit(prefix + ".proj", f);
  }
};

/// Channels of the stacked frequency feature inside WMA.
///
/// Wavelet domain: reduce C -> C/4, DWT stacks four subbands back to C
/// channels at half resolution. Fourier domain: reduce C -> C/2, the FFT
/// stacks real and imaginary planes to C channels at full resolution.
inline std::size_t wma_reduced_channels(std::size_t c, FreqDomain d) {
  return d == FreqDomain::wavelet ? c / 4 : c / 2;
}

template <class T>
struct WMAWeights {
  ConvLayer<T> reduce;  // 1x1, C -> C/4 (C/2 for the Fourier-domain variant)
  ConvLayer<T> pw;      // 1x1, C -> 3C on the stacked frequency feature
  ConvLayer<T> dw;      // 3x3 depthwise on 3C
  BasicTensor<T> log_alpha;
  std::optional<ConvLayer<T>> dyn;  // 7x7, C -> C, groups C/4
  ConvLayer<T> expand;              // 1x1, C/4 -> C

  static WMAWeights make(std::size_t c, const AblationToggles& ab, Rng& rng) {
    WMAWeights w;
    const std::size_t r = wma_reduced_channels(c, ab.domain);
    w.reduce = ConvLayer<T>::make(c, r, 1, 1, true, rng);
    w.pw = ConvLayer<T>::make(c, 3 * c, 1, 1, true, rng);
    w.dw = ConvLayer<T>::make(3 * c, 3 * c, 3, 3 * c, true, rng);
    w.log_alpha = BasicTensor<T>::scalar(T(0));
    if (ab.dynamic) {
      w.dyn = ConvLayer<T>::make(c, c, kDynamicKernel, c / 4, true, rng);
      // Start the modulation near the identity so the attention path is not
      // silenced at initialization.
      for (T& b : w.dyn->bias->data()) b = T(1);
    }
    w.expand = ConvLayer<T>::make(r, c, 1, 1, true, rng);
    return w;
  }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    reduce.visit(prefix + ".reduce", f);
    pw.visit(prefix + ".pw", f);
    dw.visit(prefix + ".dw", f);
    f(prefix + ".log_alpha", log_alpha);
    if (dyn) dyn->visit(prefix + ".dyn", f);
    expand.visit(prefix + ".expand", f);
  }
};

inline std::size_t ffn_hidden(std::size_t c, double ratio) {
  return static_cast<std::size_t>(std::lround(ratio * static_cast<double>(c)));
}

template <class T>
struct FFNWeights {
  ConvLayer<T> expand;   // 1x1, C -> 2rC
  ConvLayer<T> dw;       // 3x3 depthwise on 2rC
  ConvLayer<T> project;  // 1x1, rC -> C

  static FFNWeights make(std::size_t c, double ratio, Rng& rng) {
    const std::size_t hid = ffn_hidden(c, ratio);
    FFNWeights w;
    w.expand = ConvLayer<T>::make(c, 2 * hid, 1, 1, true, rng);
    w.dw = ConvLayer<T>::make(2 * hid, 2 * hid, 3, 2 * hid, true, rng);
    w.project = ConvLayer<T>::make(hid, c, 1, 1, true, rng);
    return w;
  }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    expand.visit(prefix + ".expand", f);
    dw.visit(prefix + ".dw", f);
    project.visit(prefix + ".project", f);
  }
};

template <class T>
struct SMTWeights {
  LayerNormParams<T> norm1;
  SMAWeights<T> attn;
  LayerNormParams<T> norm2;
  FFNWeights<T> ffn;

  static SMTWeights make(std::size_t c, double ratio, Rng& rng) {
    SMTWeights w;
    w.norm1 = LayerNormParams<T>::make(c);
    w.attn = SMAWeights<T>::make(c, rng);
    w.norm2 = LayerNormParams<T>::make(c);
    w.ffn = FFNWeights<T>::make(c, ratio, rng);
    return w;
  }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    norm1.visit(prefix + ".norm1", f);
    attn.visit(prefix + ".attn", f);
    norm2.visit(prefix + ".norm2", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

template <class T>
struct WMTWeights {
  LayerNormParams<T> norm1;
  WMAWeights<T> attn;
  LayerNormParams<T> norm2;
  FFNWeights<T> ffn;

  static WMTWeights make(std::size_t c, double ratio, const AblationToggles& ab, Rng& rng) {
    WMTWeights w;
    w.norm1 = LayerNormParams<T>::make(c);
    w.attn = WMAWeights<T>::make(c, ab, rng);
    w.norm2 = LayerNormParams<T>::make(c);
    w.ffn = FFNWeights<T>::make(c, ratio, rng);
    return w;
  }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    norm1.visit(prefix + ".norm1", f);
    attn.visit(prefix + ".attn", f);
    norm2.visit(prefix + ".norm2", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

// ---------------------------------------------------------------------------
// Forward passes

/// Shapes seen by the channel attention, for structural checks.
template <class T>
struct AttentionTrace {
  Shape qkv;                 // shape of each of Q, K, V
  BasicTensor<T> attention;  // (n, 1, C, C) after softmax
};

/// softmax(norm(Q) norm(K)^T / exp(log_alpha)) V, with Q, K, V the three
/// channel thirds of `qkv`.
template <class T>
BasicTensor<T> channel_attention(const BasicTensor<T>& qkv, const BasicTensor<T>& log_alpha,
                                 AttentionTrace<T>* trace = nullptr) {
  auto parts = chunk_channels(qkv, 3);
  const auto q = normalize_planes(parts[0]);
  const auto k = normalize_planes(parts[1]);
  const auto inv_alpha = exp(scale(log_alpha, T(-1)));
  const auto attn = softmax(scale_by(matmul_nt(q, k), inv_alpha), Axis::width);
  if (trace) {
    trace->qkv = parts[2].shape();
    trace->attention = attn;
  }
  return matmul_nn(attn, parts[2]);
}

template <class T>
BasicTensor<T> sma_forward(const BasicTensor<T>& x, const SMAWeights<T>& w,
                           AttentionTrace<T>* trace = nullptr) {
  return w.proj(channel_attention(w.dw(w.pw(x)), w.log_alpha, trace));
}

template <class T>
BasicTensor<T> wma_forward(const BasicTensor<T>& x, const WMAWeights<T>& w,
                           const AblationToggles& variant, AttentionTrace<T>* trace = nullptr) {
  const Shape s = x.shape();
  require(s.c % 4 == 0, "wma: channel count " + std::to_string(s.c) + " is not divisible by 4");
  require((w.dyn.has_value()) == variant.dynamic,
          "wma: weights and ablation toggles disagree on the dynamic branch");
  const auto reduced = w.reduce(x);
  BasicTensor<T> freq;
  if (variant.domain == FreqDomain::wavelet) {
    require(s.h % 2 == 0 && s.w % 2 == 0, "wma: spatial size must be even, got " + s.str());
    freq = dwt_haar_stacked(reduced);  // [LL, LH, HL, HH], C channels at h/2 x w/2
  } else {
    freq = fft2_stacked(reduced);  // [re, im], C channels at h x w
  }
  require(freq.shape().c == s.c, "wma: stacked frequency feature has " +
                                     std::to_string(freq.shape().c) + " channels, expected " +
                                     std::to_string(s.c));
  auto attended = channel_attention(w.dw(w.pw(freq)), w.log_alpha, trace);
  if (w.dyn) attended = mul(attended, (*w.dyn)(freq));
  const auto back = variant.domain == FreqDomain::wavelet ? idwt_haar_stacked(attended)
                                                          : ifft2_real_stacked(attended);
  return w.expand(back);
}

template <class T>
BasicTensor<T> ffn_forward(const BasicTensor<T>& x, const FFNWeights<T>& w) {
  auto halves = chunk_channels(w.dw(w.expand(x)), 2);
  return w.project(mul(gelu(halves[0]), halves[1]));
}

template <class T>
BasicTensor<T> smt_forward(const BasicTensor<T>& x, const SMTWeights<T>& w,
                           AttentionTrace<T>* trace = nullptr) {
  const auto mid = add(sma_forward(w.norm1(x), w.attn, trace), x);
  return add(ffn_forward(w.norm2(mid), w.ffn), mid);
}

template <class T>
BasicTensor<T> wmt_forward(const BasicTensor<T>& x, const WMTWeights<T>& w,
                           const AblationToggles& variant, AttentionTrace<T>* trace = nullptr) {
  const auto mid = add(wma_forward(w.norm1(x), w.attn, variant, trace), x);
  return add(ffn_forward(w.norm2(mid), w.ffn), mid);
}

}  // namespace dmnet
