#pragma once

// Procedural RGB test images: sums of oriented sinusoids over a colour ramp,
// optionally with a few hard-edged discs.

#include <cmath>
#include <numbers>
#include <string>

#include "dmnet/metrics.hpp"
#include "dmnet/random.hpp"

namespace dmnet {

struct SyntheticStyle {
  std::size_t waves = 6;
  double max_freq = 0.12;  // cycles per pixel
  double min_freq = 0.02;
  std::size_t discs = 0;
  double amplitude = 0.35;
};

/// (1, 3, h, w) image with values in [0.05, 0.95].
inline Tensor synthetic_image(std::size_t h, std::size_t w, Rng& rng, const SyntheticStyle& st = {}) {
  Tensor img(Shape{1, 3, h, w});
  struct Wave {
    double fx, fy, phase, gain[3];
  };
  std::vector<Wave> waves;
  for (std::size_t k = 0; k < st.waves; ++k) {
    const double f = st.min_freq + (st.max_freq - st.min_freq) * rng.uniform();
    const double theta = 2 * std::numbers::pi * rng.uniform();
    Wave wv{f * std::cos(theta), f * std::sin(theta), 2 * std::numbers::pi * rng.uniform(), {}};
    for (double& g : wv.gain) g = (0.4 + 0.6 * rng.uniform()) / static_cast<double>(st.waves);
    waves.push_back(wv);
  }
  double base[3], ramp_x[3], ramp_y[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.35 + 0.3 * rng.uniform();
    ramp_x[c] = (rng.uniform() - 0.5) * 0.2;
    ramp_y[c] = (rng.uniform() - 0.5) * 0.2;
  }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = base[c] + ramp_x[c] * (static_cast<double>(x) / w - 0.5) +
                   ramp_y[c] * (static_cast<double>(y) / h - 0.5);
        for (const auto& wv : waves)
          v += st.amplitude * wv.gain[c] *
               std::sin(2 * std::numbers::pi * (wv.fx * x + wv.fy * y) + wv.phase);
        img.at(0, static_cast<std::size_t>(c), y, x) = static_cast<float>(v);
      }
  for (std::size_t d = 0; d < st.discs; ++d) {
    const double cy = h * rng.uniform(), cx = w * rng.uniform();
    const double r = (0.08 + 0.15 * rng.uniform()) * static_cast<double>(std::min(h, w));
    double col[3];
    for (double& c : col) c = 0.1 + 0.8 * rng.uniform();
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        if (dy * dy + dx * dx > r * r) continue;
        for (int c = 0; c < 3; ++c) {
          float& p = img.at(0, static_cast<std::size_t>(c), y, x);
          p = static_cast<float>(0.5 * p + 0.5 * col[c]);
        }
      }
  }
  for (auto& v : img.data()) v = std::clamp(v, 0.05f, 0.95f);
  return img;
}

/// `count` HR images of size h x w turned into bicubic LR/HR pairs.
inline Dataset synthetic_dataset(std::size_t count, std::size_t h, std::size_t w, std::size_t scale,
                                 std::uint64_t seed, const SyntheticStyle& st = {}) {
  Rng rng(seed);
  Dataset out;
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03zu", i);
    out.push_back(make_pair_from_hr(name, synthetic_image(h, w, rng, st), scale));
  }
  return out;
}

}  // namespace dmnet
