#pragma once

// Single-level orthonormal 2-D Haar transform.
//
// The first pass combines vertically adjacent rows with the low-pass filter
// (1, 1)/sqrt2 and high-pass filter (1, -1)/sqrt2, halving the height. The
// second pass does the same over adjacent columns. For a 2x2 block
//
//     [a b]
//     [c d]
//
//   LL = (a + b + c + d) / 2     LH = (a - b + c - d) / 2   (horizontal detail)
//   HL = (a + b - c - d) / 2     HH = (a - b - c + d) / 2
//
// so LH is low-pass across rows and high-pass across columns. The stacked
// layout concatenates the subbands along channels in the order LL, LH, HL, HH.

#include <atomic>

#include "dmnet/ops.hpp"

namespace dmnet {

template <class T>
struct BasicSubbandQuad {
  BasicTensor<T> ll, lh, hl, hh;

  [[nodiscard]] bool consistent() const {
    return ll.shape() == lh.shape() && ll.shape() == hl.shape() && ll.shape() == hh.shape();
  }
};

using SubbandQuad = BasicSubbandQuad<float>;

namespace testing {
/// Mutation hook for the self-check: flips one sign of the forward HH filter.
inline std::atomic<bool> inject_haar_sign_fault{false};
}  // namespace testing

/// (n, c, h, w) -> (n, 4c, h/2, w/2) with subbands stacked LL, LH, HL, HH.
template <class T>
BasicTensor<T> dwt_haar_stacked(const BasicTensor<T>& x) {
  const Shape s = x.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0,
          "dwt_haar: height and width must be even, got " + s.str());
  const std::size_t h2 = s.h / 2, w2 = s.w / 2, q = h2 * w2;
  BasicTensor<T> out(Shape{s.n, 4 * s.c, h2, w2});
  const T hf = T(0.5);
  const T dsign = testing::inject_haar_sign_fault.load(std::memory_order_relaxed) ? T(-1) : T(1);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* xp = x.ptr() + (n * s.c + c) * s.plane();
      T* ll = out.ptr() + (n * 4 * s.c + c) * q;
      T* lh = ll + s.c * q;
      T* hl = lh + s.c * q;
      T* hh = hl + s.c * q;
      for (std::size_t i = 0; i < h2; ++i)
        for (std::size_t j = 0; j < w2; ++j) {
          const T a = xp[(2 * i) * s.w + 2 * j], b = xp[(2 * i) * s.w + 2 * j + 1];
          const T c2 = xp[(2 * i + 1) * s.w + 2 * j], d = xp[(2 * i + 1) * s.w + 2 * j + 1];
          const std::size_t k = i * w2 + j;
          ll[k] = hf * (a + b + c2 + d);
          lh[k] = hf * (a - b + c2 - d);
          hl[k] = hf * (a + b - c2 - d);
          hh[k] = hf * (a - b - c2 + dsign * d);
        }
    }
  detail::record<T>("dwt_haar", {x}, out, [x, out]() mutable {
    // Orthonormal: the adjoint is the inverse transform.
    const Shape s = x.shape();
    const std::size_t h2 = s.h / 2, w2 = s.w / 2, q = h2 * w2;
    const T hf = T(0.5);
    auto g = out.grad();
    auto gx = x.grad_buffer();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        T* gp = gx.data() + (n * s.c + c) * s.plane();
        const T* ll = g.data() + (n * 4 * s.c + c) * q;
        const T* lh = ll + s.c * q;
        const T* hl = lh + s.c * q;
        const T* hh = hl + s.c * q;
        for (std::size_t i = 0; i < h2; ++i)
          for (std::size_t j = 0; j < w2; ++j) {
            const std::size_t k = i * w2 + j;
            gp[(2 * i) * s.w + 2 * j] += hf * (ll[k] + lh[k] + hl[k] + hh[k]);
            gp[(2 * i) * s.w + 2 * j + 1] += hf * (ll[k] - lh[k] + hl[k] - hh[k]);
            gp[(2 * i + 1) * s.w + 2 * j] += hf * (ll[k] + lh[k] - hl[k] - hh[k]);
            gp[(2 * i + 1) * s.w + 2 * j + 1] += hf * (ll[k] - lh[k] - hl[k] + hh[k]);
          }
      }
  });
  return out;
}

/// Inverse of dwt_haar_stacked: (n, 4c, h, w) -> (n, c, 2h, 2w).
template <class T>
BasicTensor<T> idwt_haar_stacked(const BasicTensor<T>& y) {
  const Shape s = y.shape();
  require(s.c % 4 == 0, "idwt_haar: stacked channel count " + std::to_string(s.c) +
                            " is not a multiple of 4");
  const std::size_t c4 = s.c / 4, q = s.plane(), ow = 2 * s.w;
  BasicTensor<T> out(Shape{s.n, c4, 2 * s.h, 2 * s.w});
  const T hf = T(0.5);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < c4; ++c) {
      T* op = out.ptr() + (n * c4 + c) * 4 * q;
      const T* ll = y.ptr() + (n * s.c + c) * q;
      const T* lh = ll + c4 * q;
      const T* hl = lh + c4 * q;
      const T* hh = hl + c4 * q;
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) {
          const std::size_t k = i * s.w + j;
          op[(2 * i) * ow + 2 * j] = hf * (ll[k] + lh[k] + hl[k] + hh[k]);
          op[(2 * i) * ow + 2 * j + 1] = hf * (ll[k] - lh[k] + hl[k] - hh[k]);
          op[(2 * i + 1) * ow + 2 * j] = hf * (ll[k] + lh[k] - hl[k] - hh[k]);
          op[(2 * i + 1) * ow + 2 * j + 1] = hf * (ll[k] - lh[k] - hl[k] + hh[k]);
        }
    }
  detail::record<T>("idwt_haar", {y}, out, [y, out]() mutable {
    const Shape s = y.shape();
    const std::size_t c4 = s.c / 4, q = s.plane(), ow = 2 * s.w;
    const T hf = T(0.5);
    auto g = out.grad();
    auto gy = y.grad_buffer();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < c4; ++c) {
        const T* gp = g.data() + (n * c4 + c) * 4 * q;
        T* ll = gy.data() + (n * s.c + c) * q;
        T* lh = ll + c4 * q;
        T* hl = lh + c4 * q;
        T* hh = hl + c4 * q;
        for (std::size_t i = 0; i < s.h; ++i)
          for (std::size_t j = 0; j < s.w; ++j) {
            const std::size_t k = i * s.w + j;
            const T a = gp[(2 * i) * ow + 2 * j], b = gp[(2 * i) * ow + 2 * j + 1];
            const T c2 = gp[(2 * i + 1) * ow + 2 * j], d = gp[(2 * i + 1) * ow + 2 * j + 1];
            ll[k] += hf * (a + b + c2 + d);
            lh[k] += hf * (a - b + c2 - d);
            hl[k] += hf * (a + b - c2 - d);
            hh[k] += hf * (a - b - c2 + d);
          }
      }
  });
  return out;
}

template <class T>
BasicSubbandQuad<T> dwt_haar(const BasicTensor<T>& x) {
  auto parts = chunk_channels(dwt_haar_stacked(x), 4);
  return {parts[0], parts[1], parts[2], parts[3]};
}

template <class T>
BasicTensor<T> idwt_haar(const BasicSubbandQuad<T>& q) {
  require(q.consistent(), "idwt_haar: subband shapes differ: LL " + q.ll.shape().str() + ", LH " +
                              q.lh.shape().str() + ", HL " + q.hl.shape().str() + ", HH " +
                              q.hh.shape().str());
  return idwt_haar_stacked(concat_channels<T>({q.ll, q.lh, q.hl, q.hh}));
}

}  // namespace dmnet
