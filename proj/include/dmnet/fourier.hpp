#pragma once

// 2-D discrete Fourier transform per (n, c) plane, amplitude/phase
// decomposition and the amplitude+phase L1 loss.
//
// Spectra are carried as real tensors with 2c channels: the c real planes
// followed by the c imaginary planes. Power-of-two lengths use an iterative
// radix-2 transform; other lengths fall back to the direct sum. Twiddles at
// multiples of a quarter turn are exact, so bins that are real for a real
// signal (DC and Nyquist rows/columns) come out with an imaginary part of
// exactly zero.

#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "dmnet/ops.hpp"

namespace dmnet {

namespace fft {

using cplx = std::complex<double>;

/// Precomputed 1-D transform of a fixed length.
class Plan {
 public:
  explicit Plan(std::size_t n) : n_(n), twiddle_(n) {
    for (std::size_t k = 0; k < n; ++k) {
      double re, im;
      if (4 * k % n == 0) {
        switch (4 * k / n) {
          case 0: re = 1, im = 0; break;
          case 1: re = 0, im = -1; break;
          case 2: re = -1, im = 0; break;
          default: re = 0, im = 1; break;
        }
      } else {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        re = std::cos(a);
        im = -std::sin(a);
      }
      twiddle_[k] = cplx(re, im);
    }
    pow2_ = n > 0 && (n & (n - 1)) == 0;
    if (pow2_) {
      rev_.resize(n);
      std::size_t bits = 0;
      while ((std::size_t{1} << bits) < n) ++bits;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b)
          if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
        rev_[i] = r;
      }
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return n_; }

  /// In-place unnormalized transform of `n` values spaced `stride` apart.
  /// inverse=true uses the conjugate kernel exp(+2 pi i k m / n).
  void run(cplx* data, std::size_t stride, bool inverse, std::vector<cplx>& scratch) const {
    scratch.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) scratch[i] = data[i * stride];
    if (pow2_) {
      radix2(scratch, inverse);
      for (std::size_t i = 0; i < n_; ++i) data[i * stride] = scratch[i];
      return;
    }
    for (std::size_t k = 0; k < n_; ++k) {
      double re = 0, im = 0;
      for (std::size_t m = 0; m < n_; ++m) {
        const cplx w = tw(k * m % n_, inverse);
        re += scratch[m].real() * w.real() - scratch[m].imag() * w.imag();
        im += scratch[m].real() * w.imag() + scratch[m].imag() * w.real();
      }
      data[k * stride] = cplx(re, im);
    }
  }

 private:
  [[nodiscard]] cplx tw(std::size_t k, bool inverse) const {
    const cplx w = twiddle_[k];
    return inverse ? cplx(w.real(), -w.imag()) : w;
  }

  void radix2(std::vector<cplx>& a, bool inverse) const {
    for (std::size_t i = 0; i < n_; ++i)
      if (i < rev_[i]) std::swap(a[i], a[rev_[i]]);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2, step = n_ / len;
      for (std::size_t i = 0; i < n_; i += len)
        for (std::size_t j = 0; j < half; ++j) {
          const cplx w = tw(j * step, inverse);
          const cplx u = a[i + j];
          const cplx x = a[i + j + half];
          const cplx v(x.real() * w.real() - x.imag() * w.imag(),
                       x.real() * w.imag() + x.imag() * w.real());
          a[i + j] = cplx(u.real() + v.real(), u.imag() + v.imag());
          a[i + j + half] = cplx(u.real() - v.real(), u.imag() - v.imag());
        }
    }
  }

  std::size_t n_;
  std::vector<cplx> twiddle_;
  std::vector<std::size_t> rev_;
  bool pow2_ = false;
};

inline const Plan& plan_for(std::size_t n) {
  thread_local std::map<std::size_t, Plan> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Plan(n)).first;
  return it->second;
}

/// Unnormalized 2-D transform of a row-major h x w plane, in place.
inline void transform2d(std::vector<cplx>& plane, std::size_t h, std::size_t w, bool inverse) {
  const Plan& rows = plan_for(w);
  const Plan& cols = plan_for(h);
  std::vector<cplx> scratch;
  for (std::size_t y = 0; y < h; ++y) rows.run(plane.data() + y * w, 1, inverse, scratch);
  for (std::size_t x = 0; x < w; ++x) cols.run(plane.data() + x, w, inverse, scratch);
}

/// Applies `transform2d` to every (n, c) plane of a stacked [re; im] tensor
/// pair and writes the result into stacked output buffers.
template <class T>
void transform_planes(const Shape& s, const T* re_in, const T* im_in, T* re_out, T* im_out,
                      bool inverse, double scale) {
  const std::size_t hw = s.plane();
  std::vector<cplx> plane(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    plane[i] = cplx(static_cast<double>(re_in[i]), im_in ? static_cast<double>(im_in[i]) : 0.0);
  }
  transform2d(plane, s.h, s.w, inverse);
  for (std::size_t i = 0; i < hw; ++i) {
    re_out[i] = static_cast<T>(plane[i].real() * scale);
    if (im_out) im_out[i] = static_cast<T>(plane[i].imag() * scale);
  }
}

}  // namespace fft

template <class T>
struct BasicComplexField {
  BasicTensor<T> re, im;
};

using ComplexField = BasicComplexField<float>;

/// Real (n, c, h, w) -> stacked spectrum (n, 2c, h, w), unnormalized forward DFT.
template <class T>
BasicTensor<T> fft2_stacked(const BasicTensor<T>& x) {
  const Shape s = x.shape();
  const std::size_t hw = s.plane();
  BasicTensor<T> out(Shape{s.n, 2 * s.c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* xp = x.ptr() + (n * s.c + c) * hw;
      T* re = out.ptr() + (n * 2 * s.c + c) * hw;
      T* im = re + s.c * hw;
      fft::transform_planes<T>(s, xp, nullptr, re, im, false, 1.0);
    }
  detail::record<T>("fft2", {x}, out, [x, out]() mutable {
    // d/dx of Re/Im parts: real part of the conjugate transform of the gradient.
    const Shape s = x.shape();
    const std::size_t hw = s.plane();
    auto g = out.grad();
    auto gx = x.grad_buffer();
    std::vector<T> tmp(hw);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        const T* gre = g.data() + (n * 2 * s.c + c) * hw;
        const T* gim = gre + s.c * hw;
        fft::transform_planes<T>(s, gre, gim, tmp.data(), nullptr, true, 1.0);
        T* gp = gx.data() + (n * s.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) gp[i] += tmp[i];
      }
  });
  return out;
}

/// Stacked spectrum (n, 2c, h, w) -> real part of the normalized inverse DFT.
template <class T>
BasicTensor<T> ifft2_real_stacked(const BasicTensor<T>& z) {
  const Shape s = z.shape();
  require(s.c % 2 == 0, "ifft2: stacked spectrum needs an even channel count, got " + s.str());
  const std::size_t c = s.c / 2, hw = s.plane();
  const double inv = 1.0 / static_cast<double>(hw);
  BasicTensor<T> out(Shape{s.n, c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t k = 0; k < c; ++k) {
      const T* re = z.ptr() + (n * s.c + k) * hw;
      const T* im = re + c * hw;
      fft::transform_planes<T>(s, re, im, out.ptr() + (n * c + k) * hw, nullptr, true, inv);
    }
  detail::record<T>("ifft2_real", {z}, out, [z, out]() mutable {
    const Shape s = z.shape();
    const std::size_t c = s.c / 2, hw = s.plane();
    const double inv = 1.0 / static_cast<double>(hw);
    auto g = out.grad();
    auto gz = z.grad_buffer();
    std::vector<T> gre(hw), gim(hw);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t k = 0; k < c; ++k) {
        fft::transform_planes<T>(s, g.data() + (n * c + k) * hw, nullptr, gre.data(), gim.data(),
                                 false, inv);
        T* zr = gz.data() + (n * s.c + k) * hw;
        T* zi = zr + c * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          zr[i] += gre[i];
          zi[i] += gim[i];
        }
      }
  });
  return out;
}

template <class T>
BasicComplexField<T> fft2(const BasicTensor<T>& x) {
  auto parts = chunk_channels(fft2_stacked(x), 2);
  return {parts[0], parts[1]};
}

template <class T>
BasicTensor<T> ifft2_real(const BasicComplexField<T>& f) {
  require(f.re.shape() == f.im.shape(), "ifft2: re/im shape mismatch " + f.re.shape().str() +
                                            " vs " + f.im.shape().str());
  return ifft2_real_stacked(concat_channels<T>({f.re, f.im}));
}

/// Stacked spectrum (n, 2c, h, w) -> stacked [amplitude; phase] (n, 2c, h, w).
/// Phase lies in (-pi, pi]; at the origin both values and their gradients are 0.
template <class T>
BasicTensor<T> amplitude_phase_stacked(const BasicTensor<T>& z) {
  const Shape s = z.shape();
  require(s.c % 2 == 0, "amplitude_phase: stacked spectrum needs an even channel count, got " + s.str());
  const std::size_t c = s.c / 2, hw = s.plane(), half = c * hw;
  BasicTensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* re = z.ptr() + n * s.c * hw;
    const T* im = re + half;
    T* amp = out.ptr() + n * s.c * hw;
    T* ph = amp + half;
    for (std::size_t i = 0; i < half; ++i) {
      amp[i] = std::hypot(re[i], im[i]);
      T p = (re[i] == T(0) && im[i] == T(0)) ? T(0) : std::atan2(im[i], re[i]);
      if (p <= -std::numbers::pi_v<T>) p = std::numbers::pi_v<T>;
      ph[i] = p;
    }
  }
  detail::record<T>("amplitude_phase", {z}, out, [z, out]() mutable {
    const Shape s = z.shape();
    const std::size_t hw = s.plane(), half = s.c / 2 * hw;
    auto g = out.grad();
    auto gz = z.grad_buffer();
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = n * s.c * hw;
      const T* re = z.ptr() + base;
      const T* im = re + half;
      const T* amp = out.ptr() + base;
      const T* ga = g.data() + base;
      const T* gp = ga + half;
      T* gre = gz.data() + base;
      T* gim = gre + half;
      for (std::size_t i = 0; i < half; ++i) {
        const T a = amp[i];
        if (a == T(0)) continue;
        const T a2 = a * a;
        gre[i] += ga[i] * re[i] / a - gp[i] * im[i] / a2;
        gim[i] += ga[i] * im[i] / a + gp[i] * re[i] / a2;
      }
    }
  });
  return out;
}

template <class T>
std::pair<BasicTensor<T>, BasicTensor<T>> amplitude_phase(const BasicComplexField<T>& f) {
  require(f.re.shape() == f.im.shape(), "amplitude_phase: re/im shape mismatch " +
                                            f.re.shape().str() + " vs " + f.im.shape().str());
  auto parts = chunk_channels(amplitude_phase_stacked(concat_channels<T>({f.re, f.im})), 2);
  return {parts[0], parts[1]};
}

/// mean |[A_sr, P_sr] - [A_hr, P_hr]| over all amplitude and phase entries.
template <class T>
BasicTensor<T> frequency_loss(const BasicTensor<T>& sr, const BasicTensor<T>& hr) {
  require(sr.shape() == hr.shape(),
          "frequency_loss: shape mismatch " + sr.shape().str() + " vs " + hr.shape().str());
  return mean_abs_diff(amplitude_phase_stacked(fft2_stacked(sr)),
                       amplitude_phase_stacked(fft2_stacked(hr)));
}

}  // namespace dmnet
