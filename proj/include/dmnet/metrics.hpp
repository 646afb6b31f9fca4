#pragma once

// Evaluation protocol (BT.601 luma, PSNR, SSIM, border crop) and the bicubic
// resampler used to synthesize low-resolution inputs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dmnet/model.hpp"

namespace dmnet {

/// BT.601 studio-swing luma of an RGB tensor with values in [0, 1].
template <class T>
BasicTensor<T> rgb_to_y(const BasicTensor<T>& rgb) {
  const Shape s = rgb.shape();
  require(s.c == 3, "rgb_to_y: expected 3 channels, got " + s.str());
  BasicTensor<T> y(Shape{s.n, 1, s.h, s.w});
  const std::size_t hw = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* r = rgb.ptr() + n * 3 * hw;
    const T* g = r + hw;
    const T* b = g + hw;
    T* o = y.ptr() + n * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const double v = (65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i] + 16.0) / 255.0;
      o[i] = static_cast<T>(v);
    }
  }
  return y;
}

/// Rounds to the nearest 1/255 level after clamping to [0, 1]; halves round
/// away from zero.
template <class T>
BasicTensor<T> quantize8(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
    dst[i] = static_cast<T>(std::round(v * 255.0) / 255.0);
  }
  return out;
}

/// 10 log10(peak^2 / MSE); +infinity for identical inputs.
template <class T>
double psnr(const BasicTensor<T>& a, const BasicTensor<T>& b, double peak = 1.0) {
  require(a.shape() == b.shape(), "psnr: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  require(a.numel() > 0, "psnr: empty tensors");
  auto x = a.data(), y = b.data();
  double se = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    se += d * d;
  }
  if (se == 0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(x.size());
  return 10.0 * std::log10(peak * peak / mse);
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (static_cast<double>(size) - 1) / 2;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
  }
  const double total = std::accumulate(g.begin(), g.end(), 0.0);
  for (double& v : g) v /= total;
  return g;
}

/// Single-scale SSIM over valid window positions (11x11 Gaussian, sigma 1.5,
/// K1 = 0.01, K2 = 0.03). Inputs are single-channel; batch items are averaged.
template <class T>
double ssim(const BasicTensor<T>& a, const BasicTensor<T>& b, double data_range = 1.0) {
  const Shape s = a.shape();
  require(s == b.shape(), "ssim: shape mismatch " + s.str() + " vs " + b.shape().str());
  require(s.c == 1, "ssim: expected single-channel images, got " + s.str());
  require(s.h >= kSsimWindow && s.w >= kSsimWindow,
          "ssim: image " + s.str() + " smaller than the 11x11 window");
  const auto g = gaussian_window(kSsimWindow, kSsimSigma);
  const double c1 = std::pow(0.01 * data_range, 2), c2 = std::pow(0.03 * data_range, 2);
  const std::size_t oh = s.h - kSsimWindow + 1, ow = s.w - kSsimWindow + 1;

  // Separable valid filtering of one plane.
  auto filter = [&](const std::vector<double>& src) {
    std::vector<double> tmp(s.h * ow), out(oh * ow);
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < kSsimWindow; ++k) acc += g[k] * src[y * s.w + x + k];
        tmp[y * ow + x] = acc;
      }
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < kSsimWindow; ++k) acc += g[k] * tmp[(y + k) * ow + x];
        out[y * ow + x] = acc;
      }
    return out;
  };

  double total = 0;
  const std::size_t hw = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::vector<double> x(hw), y(hw), xx(hw), yy(hw), xy(hw);
    for (std::size_t i = 0; i < hw; ++i) {
      x[i] = a.ptr()[n * hw + i];
      y[i] = b.ptr()[n * hw + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
    double acc = 0;
    for (std::size_t i = 0; i < oh * ow; ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cxy = sxy[i] - mx[i] * my[i];
      const double num = (2 * mx[i] * my[i] + c1) * (2 * cxy + c2);
      const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
      acc += num / den;
    }
    total += acc / static_cast<double>(oh * ow);
  }
  return total / static_cast<double>(s.n);
}

// ---------------------------------------------------------------------------
// Bicubic resampling

/// Keys cubic kernel with a = -0.5.
inline double cubic_kernel(double x) {
  const double ax = std::abs(x), ax2 = ax * ax, ax3 = ax2 * ax;
  if (ax <= 1) return 1.5 * ax3 - 2.5 * ax2 + 1;
  if (ax <= 2) return -0.5 * ax3 + 2.5 * ax2 - 4 * ax + 2;
  return 0;
}

struct ResampleTaps {
  std::vector<std::size_t> index;  // out_len x taps, clamped source indices
  std::vector<double> weight;      // out_len x taps, rows sum to 1
  std::size_t taps = 0;
};

/// 1-D taps for resizing `in_len` samples by `factor`. Downscaling widens the
/// kernel by 1/factor (antialiasing). Edges replicate.
inline ResampleTaps resample_taps(std::size_t in_len, std::size_t out_len, double factor) {
  const double kscale = factor < 1 ? factor : 1.0;
  const double width = 4.0 / kscale;
  ResampleTaps t;
  t.taps = static_cast<std::size_t>(std::ceil(width)) + 2;
  t.index.resize(out_len * t.taps);
  t.weight.resize(out_len * t.taps);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / factor - 0.5;
    const auto left = static_cast<long>(std::floor(u - width / 2));
    double total = 0;
    for (std::size_t k = 0; k < t.taps; ++k) {
      const long j = left + static_cast<long>(k);
      const double wv = kscale * cubic_kernel(kscale * (u - static_cast<double>(j)));
      const long clamped = std::clamp(j, 0L, static_cast<long>(in_len) - 1);
      t.index[i * t.taps + k] = static_cast<std::size_t>(clamped);
      t.weight[i * t.taps + k] = wv;
      total += wv;
    }
    for (std::size_t k = 0; k < t.taps; ++k) t.weight[i * t.taps + k] /= total;
  }
  return t;
}

inline bool supported_resize_factor(double f) {
  for (double v : {0.5, 1.0 / 3.0, 0.25, 2.0, 3.0, 4.0})
    if (std::abs(f - v) < 1e-12) return true;
  return false;
}

/// Resizes every plane by `factor` (one of 1/2, 1/3, 1/4, 2, 3, 4).
template <class T>
BasicTensor<T> bicubic_resize(const BasicTensor<T>& img, double factor) {
  const Shape s = img.shape();
  require(supported_resize_factor(factor),
          "bicubic_resize: unsupported factor " + std::to_string(factor));
  auto out_len = [&](std::size_t len, const char* axis) {
    const double v = static_cast<double>(len) * factor;
    const double r = std::round(v);
    require(std::abs(v - r) < 1e-6 && r >= 1,
            std::string("bicubic_resize: ") + axis + " " + std::to_string(len) + " x " +
                std::to_string(factor) + " is not an integer size");
    return static_cast<std::size_t>(r);
  };
  const std::size_t oh = out_len(s.h, "height"), ow = out_len(s.w, "width");
  const auto tx = resample_taps(s.w, ow, factor);
  const auto ty = resample_taps(s.h, oh, factor);
  BasicTensor<T> out(Shape{s.n, s.c, oh, ow});
  std::vector<double> tmp(s.h * ow);
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = img.ptr() + p * s.plane();
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < tx.taps; ++k)
          acc += tx.weight[x * tx.taps + k] * src[y * s.w + tx.index[x * tx.taps + k]];
        tmp[y * ow + x] = acc;
      }
    T* dst = out.ptr() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0;
        for (std::size_t k = 0; k < ty.taps; ++k)
          acc += ty.weight[y * ty.taps + k] * tmp[ty.index[y * ty.taps + k] * ow + x];
        dst[y * ow + x] = static_cast<T>(acc);
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

struct ImagePair {
  std::string name;
  Tensor lr;  // (1, 3, h, w)
  Tensor hr;  // (1, 3, s h, s w)
};

using Dataset = std::vector<ImagePair>;

/// Crops the bottom/right so both dimensions are multiples of `scale`.
template <class T>
BasicTensor<T> mod_crop(const BasicTensor<T>& img, std::size_t scale) {
  const Shape s = img.shape();
  return crop(img, 0, 0, s.h - s.h % scale, s.w - s.w % scale);
}

/// Builds an LR/HR pair by mod-cropping HR and downscaling it bicubically.
inline ImagePair make_pair_from_hr(std::string name, const Tensor& hr, std::size_t scale) {
  Tensor cropped = mod_crop(hr, scale);
  Tensor lr = bicubic_resize(cropped, 1.0 / static_cast<double>(scale));
  return {std::move(name), std::move(lr), std::move(cropped)};
}

// ---------------------------------------------------------------------------
// Evaluation

struct ImageScore {
  std::string name;
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::string dataset;
  std::size_t scale = 0;
  std::size_t border = 0;
  std::vector<ImageScore> images;
  std::vector<std::string> errors;  // images rejected, with reason
  double mean_psnr = 0;
  double mean_ssim = 0;
};

inline std::string format_metric(double v, int digits) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Super-resolves every LR image with `upscale`, quantizes both SR and HR to
/// 8 bits, crops `scale` pixels from each side and scores the Y channel.
template <class Upscale>
EvalReport evaluate(Upscale&& upscale, Dataset pairs, std::size_t scale, std::string dataset_name) {
  require(!pairs.empty(), "evaluate: empty dataset");
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  EvalReport rep;
  rep.dataset = std::move(dataset_name);
  rep.scale = scale;
  rep.border = scale;
  for (const auto& p : pairs) {
    const Tensor sr = quantize8(upscale(p.lr));
    const Tensor hr = quantize8(p.hr);
    if (sr.shape() != hr.shape()) {
      rep.errors.push_back(p.name + ": SR " + sr.shape().str() + " does not match HR " + hr.shape().str());
      continue;
    }
    const Shape s = hr.shape();
    if (s.h <= 2 * scale || s.w <= 2 * scale) {
      rep.errors.push_back(p.name + ": image " + s.str() + " too small for border crop");
      continue;
    }
    const Tensor ys = rgb_to_y(crop(sr, scale, scale, s.h - 2 * scale, s.w - 2 * scale));
    const Tensor yh = rgb_to_y(crop(hr, scale, scale, s.h - 2 * scale, s.w - 2 * scale));
    ImageScore sc{p.name, psnr(ys, yh, 1.0), 0.0};
    try {
      sc.ssim = ssim(ys, yh);
    } catch (const ShapeError& e) {
      rep.errors.push_back(p.name + ": " + e.what());
      continue;
    }
    rep.images.push_back(sc);
  }
  if (!rep.images.empty()) {
    double ps = 0, ss = 0;
    for (const auto& im : rep.images) {
      ps += im.psnr;
      ss += im.ssim;
    }
    rep.mean_psnr = ps / static_cast<double>(rep.images.size());
    rep.mean_ssim = ss / static_cast<double>(rep.images.size());
  }
  return rep;
}

/// Human-readable table.
inline std::string format_report_table(const EvalReport& r) {
  std::ostringstream os;
  char line[256];
  os << "dataset: " << r.dataset << "  scale: x" << r.scale << "  border: " << r.border << "\n";
  std::snprintf(line, sizeof line, "%-32s %10s %8s\n", "image", "PSNR(dB)", "SSIM");
  os << line;
  for (const auto& im : r.images) {
    std::snprintf(line, sizeof line, "%-32s %10s %8s\n", im.name.c_str(),
                  format_metric(im.psnr, 4).c_str(), format_metric(im.ssim, 6).c_str());
    os << line;
  }
  std::snprintf(line, sizeof line, "%-32s %10s %8s\n", "mean", format_metric(r.mean_psnr, 4).c_str(),
                format_metric(r.mean_ssim, 6).c_str());
  os << line;
  for (const auto& e : r.errors) os << "rejected: " << e << "\n";
  return os.str();
}

/// Machine-readable form: one `image psnr ssim` line per image, then
/// `mean psnr ssim`.
inline std::string format_report_kv(const EvalReport& r) {
  std::ostringstream os;
  for (const auto& im : r.images)
    os << im.name << ' ' << format_metric(im.psnr, 6) << ' ' << format_metric(im.ssim, 8) << '\n';
  os << "mean " << format_metric(r.mean_psnr, 6) << ' ' << format_metric(r.mean_ssim, 8) << '\n';
  return os.str();
}

}  // namespace dmnet
