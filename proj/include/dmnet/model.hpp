#pragma once

// DMNet: shallow 3x3 conv -> N1 groups of (N2 x [SMT, WMT] + 3x3 conv, with a
// group residual) -> global residual -> bias-free 3x3 conv to 3 s^2 channels
// -> pixel shuffle. The frequency output is the DFT of the SR image.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dmnet/blocks.hpp"

namespace dmnet {

struct DMNetConfig {
  std::size_t channels = 48;
  std::size_t n_groups = 3;
  std::size_t n_blocks = 3;
  std::size_t scale = 2;
  double ffn_ratio = 2.0;
  AblationToggles ablation;

  bool operator==(const DMNetConfig&) const = default;

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("DMNetConfig: " + m); };
    if (channels == 0 || channels % 4 != 0)
      fail("channels must be a positive multiple of 4, got " + std::to_string(channels));
    if (scale < 2 || scale > 4) fail("scale must be 2, 3 or 4, got " + std::to_string(scale));
    if (n_groups < 1) fail("n_groups must be >= 1");
    if (n_blocks < 1) fail("n_blocks must be >= 1");
    if (!(ffn_ratio > 0) || ffn_hidden(channels, ffn_ratio) == 0)
      fail("ffn_ratio must give a positive hidden width, got " + std::to_string(ffn_ratio));
  }
};

template <class T>
struct SWBlockWeights {
  SMTWeights<T> smt;
  WMTWeights<T> wmt;
};

template <class T>
struct SWGroupWeights {
  std::vector<SWBlockWeights<T>> blocks;
  ConvLayer<T> conv;
};

template <class T>
struct DMNetWeights {
  ConvLayer<T> head;
  std::vector<SWGroupWeights<T>> groups;
  ConvLayer<T> tail;

  static DMNetWeights make(const DMNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const std::size_t c = cfg.channels;
    DMNetWeights w;
    w.head = ConvLayer<T>::make(3, c, 3, 1, true, rng);
    for (std::size_t g = 0; g < cfg.n_groups; ++g) {
      SWGroupWeights<T> grp;
      for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
        SWBlockWeights<T> blk;
        blk.smt = SMTWeights<T>::make(c, cfg.ffn_ratio, rng);
        blk.wmt = WMTWeights<T>::make(c, cfg.ffn_ratio, cfg.ablation, rng);
        grp.blocks.push_back(std::move(blk));
      }
      grp.conv = ConvLayer<T>::make(c, c, 3, 1, true, rng);
      w.groups.push_back(std::move(grp));
    }
    w.tail = ConvLayer<T>::make(c, 3 * cfg.scale * cfg.scale, 3, 1, false, rng);
    return w;
  }

  /// Visits every parameter tensor with its dotted checkpoint name, in a
  /// fixed order.
  void visit(const ParamVisitor<T>& f) {
    head.visit("head", f);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const std::string gp = "groups." + std::to_string(g);
      for (std::size_t b = 0; b < groups[g].blocks.size(); ++b) {
        const std::string bp = gp + ".blocks." + std::to_string(b);
        groups[g].blocks[b].smt.visit(bp + ".smt", f);
        groups[g].blocks[b].wmt.visit(bp + ".wmt", f);
      }
      groups[g].conv.visit(gp + ".conv", f);
    }
    tail.visit("tail", f);
  }

  struct Named {
    std::string name;
    BasicTensor<T> tensor;
  };

  /// Handles to all parameters (shared storage) in visit order.
  std::vector<Named> parameters() {
    std::vector<Named> out;
    visit([&](const std::string& n, BasicTensor<T>& t) { out.push_back({n, t}); });
    return out;
  }

  std::size_t param_count() {
    std::size_t total = 0;
    visit([&](const std::string&, BasicTensor<T>& t) { total += t.numel(); });
    return total;
  }

  void set_requires_grad(bool on) {
    visit([&](const std::string&, BasicTensor<T>& t) { t.set_requires_grad(on); });
  }
};

template <class To, class From>
DMNetWeights<To> cast_weights(const DMNetWeights<From>& src, const DMNetConfig& cfg) {
  auto dst = DMNetWeights<To>::make(cfg, 0);
  auto from = const_cast<DMNetWeights<From>&>(src).parameters();
  auto to = dst.parameters();
  require(from.size() == to.size(), "cast_weights: parameter layout differs from config");
  for (std::size_t i = 0; i < from.size(); ++i) {
    require(from[i].tensor.shape() == to[i].tensor.shape(),
            "cast_weights: shape mismatch at " + from[i].name);
    auto s = from[i].tensor.data();
    auto d = to[i].tensor.data();
    for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<To>(s[k]);
  }
  return dst;
}

template <class T>
struct ForwardOutput {
  BasicTensor<T> sr;
  BasicComplexField<T> freq;
};

/// LR (n, 3, h, w) -> SR (n, 3, s h, s w). h and w must be even.
template <class T>
BasicTensor<T> super_resolve(const DMNetConfig& cfg, const DMNetWeights<T>& w,
                             const BasicTensor<T>& lr) {
  const Shape s = lr.shape();
  require(s.c == 3, "dmnet: input must have 3 channels, got " + s.str());
  require(s.h % 2 == 0 && s.w % 2 == 0,
          "dmnet: input height and width must be even (pad first), got " + s.str());
  require(w.groups.size() == cfg.n_groups, "dmnet: weights do not match config group count");
  const auto f0 = w.head(lr);
  auto feat = f0;
  for (const auto& grp : w.groups) {
    auto x = feat;
    for (const auto& blk : grp.blocks) {
      x = smt_forward(x, blk.smt);
      x = wmt_forward(x, blk.wmt, cfg.ablation);
    }
    feat = add(grp.conv(x), feat);
  }
  const auto fd = add(feat, f0);
  return pixel_shuffle(w.tail(fd), cfg.scale);
}

template <class T>
ForwardOutput<T> forward(const DMNetConfig& cfg, const DMNetWeights<T>& w, const BasicTensor<T>& lr) {
  auto sr = super_resolve(cfg, w, lr);
  auto freq = fft2(sr);
  return {sr, freq};
}

/// Reflect-pads the bottom/right edge by one pixel where a dimension is odd.
template <class T>
BasicTensor<T> reflect_pad_even(const BasicTensor<T>& x) {
  const Shape s = x.shape();
  const std::size_t h = s.h + s.h % 2, w = s.w + s.w % 2;
  if (h == s.h && w == s.w) return x.clone();
  require(s.h >= 2 && s.w >= 2, "reflect_pad_even: image too small " + s.str());
  BasicTensor<T> out(Shape{s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const std::size_t sy = y < s.h ? y : 2 * s.h - 2 - y;
          const std::size_t sx = xx < s.w ? xx : 2 * s.w - 2 - xx;
          out.at(n, c, y, xx) = x.at(n, c, sy, sx);
        }
  return out;
}

template <class T>
BasicTensor<T> crop(const BasicTensor<T>& x, std::size_t top, std::size_t left, std::size_t h,
                    std::size_t w) {
  const Shape s = x.shape();
  require(top + h <= s.h && left + w <= s.w, "crop: window exceeds image " + s.str());
  BasicTensor<T> out(Shape{s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) out.at(n, c, y, xx) = x.at(n, c, top + y, left + xx);
  return out;
}

/// Inference on arbitrary sizes: pad odd dimensions, run, crop to s x input.
template <class T>
BasicTensor<T> upscale_any(const DMNetConfig& cfg, const DMNetWeights<T>& w, const BasicTensor<T>& lr) {
  const Shape s = lr.shape();
  auto sr = super_resolve(cfg, w, reflect_pad_even(lr));
  return crop(sr, 0, 0, s.h * cfg.scale, s.w * cfg.scale);
}

// ---------------------------------------------------------------------------
// Accounting
//
// FLOPs are 2 x multiply-accumulates. Counted: every convolution
// (2 * Cin/groups * k^2 * Cout per output pixel, biases ignored), the two
// attention matrix products (2 * C^2 * N each) and the layer-norm affine
// (2 * C per pixel). Elementwise products, softmax and the wavelet/Fourier
// transforms are not counted. Areas are fractional when the output size is
// not a multiple of the scale.

struct LayerCost {
  std::string name;
  std::uint64_t params = 0;
  double flops = 0;
};

inline std::vector<LayerCost> layer_costs(const DMNetConfig& cfg, std::size_t out_h,
                                          std::size_t out_w) {
  cfg.validate();
  const double s = static_cast<double>(cfg.scale);
  const double area = static_cast<double>(out_h) * static_cast<double>(out_w) / (s * s);
  const std::uint64_t c = cfg.channels;
  const std::uint64_t hid = ffn_hidden(cfg.channels, cfg.ffn_ratio);
  std::vector<LayerCost> out;

  auto conv = [&](const std::string& name, std::uint64_t ci, std::uint64_t co, std::uint64_t k,
                  std::uint64_t groups, bool bias, double px) {
    const std::uint64_t wts = (ci / groups) * k * k * co;
    out.push_back({name, wts + (bias ? co : 0), 2.0 * static_cast<double>(wts) * px});
  };
  auto norm = [&](const std::string& name, double px) {
    out.push_back({name, 2 * c, 2.0 * static_cast<double>(c) * px});
  };
  auto attention = [&](const std::string& name, double px) {
    out.push_back({name, 1, 2.0 * 2.0 * static_cast<double>(c * c) * px});
  };
  auto ffn = [&](const std::string& p) {
    conv(p + ".expand", c, 2 * hid, 1, 1, true, area);
    conv(p + ".dw", 2 * hid, 2 * hid, 3, 2 * hid, true, area);
    conv(p + ".project", hid, c, 1, 1, true, area);
  };

  conv("head", 3, c, 3, 1, true, area);
  for (std::size_t g = 0; g < cfg.n_groups; ++g) {
    const std::string gp = "groups." + std::to_string(g);
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
      const std::string bp = gp + ".blocks." + std::to_string(b);
      norm(bp + ".smt.norm1", area);
      conv(bp + ".smt.attn.pw", c, 3 * c, 1, 1, true, area);
      conv(bp + ".smt.attn.dw", 3 * c, 3 * c, 3, 3 * c, true, area);
      attention(bp + ".smt.attn.attention", area);
      conv(bp + ".smt.attn.proj", c, c, 1, 1, true, area);
      norm(bp + ".smt.norm2", area);
      ffn(bp + ".smt.ffn");

      const bool wav = cfg.ablation.domain == FreqDomain::wavelet;
      const std::uint64_t r = wma_reduced_channels(cfg.channels, cfg.ablation.domain);
      const double inner = wav ? area / 4.0 : area;
      norm(bp + ".wmt.norm1", area);
      conv(bp + ".wmt.attn.reduce", c, r, 1, 1, true, area);
      conv(bp + ".wmt.attn.pw", c, 3 * c, 1, 1, true, inner);
      conv(bp + ".wmt.attn.dw", 3 * c, 3 * c, 3, 3 * c, true, inner);
      attention(bp + ".wmt.attn.attention", inner);
      if (cfg.ablation.dynamic) conv(bp + ".wmt.attn.dyn", c, c, kDynamicKernel, c / 4, true, inner);
      conv(bp + ".wmt.attn.expand", r, c, 1, 1, true, area);
      norm(bp + ".wmt.norm2", area);
      ffn(bp + ".wmt.ffn");
    }
    conv(gp + ".conv", c, c, 3, 1, true, area);
  }
  conv("tail", c, 3 * cfg.scale * cfg.scale, 3, 1, false, area);
  return out;
}

inline std::uint64_t count_params(const DMNetConfig& cfg) {
  std::uint64_t total = 0;
  for (const auto& l : layer_costs(cfg, cfg.scale * 2, cfg.scale * 2)) total += l.params;
  return total;
}

/// FLOPs of one forward pass producing an out_h x out_w image.
inline std::uint64_t count_flops(const DMNetConfig& cfg, std::size_t out_h, std::size_t out_w) {
  double total = 0;
  for (const auto& l : layer_costs(cfg, out_h, out_w)) total += l.flops;
  return static_cast<std::uint64_t>(std::llround(total));
}

}  // namespace dmnet
