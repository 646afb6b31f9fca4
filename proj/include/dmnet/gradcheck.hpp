#pragma once

// Central finite-difference gradient checks in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dmnet/tensor.hpp"

namespace dmnet {

struct GradCheckEntry {
  std::string name;
  double rel_error = 0;  // max |analytic - fd| / max(max |fd|, max |analytic|, floor)
  double max_abs_grad = 0;
  double max_abs_diff = 0;
  double max_abs_fd = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool attached = false;

  [[nodiscard]] double worst() const {
    double w = 0;
    for (const auto& e : entries) w = std::max(w, e.rel_error);
    return w;
  }

  /// Normwise error over all leaves taken as one vector.
  [[nodiscard]] double global(double floor = 1e-6) const {
    double diff = 0, scale = floor;
    for (const auto& e : entries) {
      diff = std::max(diff, e.max_abs_diff);
      scale = std::max({scale, e.max_abs_fd, e.max_abs_grad});
    }
    return diff / scale;
  }
};

struct GradCheckOptions {
  double step = 1e-3;
  double floor = 1e-6;
  std::size_t max_probes = 0;  // 0: every element; otherwise an evenly strided subset
};

/// `loss` rebuilds the scalar from the current values of `leaves`. Leaves are
/// perturbed in place and restored.
inline GradCheckReport gradcheck(const std::function<Tensor64()>& loss,
                                 std::vector<std::pair<std::string, Tensor64>> leaves,
                                 const GradCheckOptions& opt = {}) {
  GradCheckReport rep;
  for (auto& [name, t] : leaves) {
    t.drop_grad();
    t.set_requires_grad(true);
  }
  {
    Tape64 tape;
    Tensor64 l;
    {
      TapeScope scope(tape);
      l = loss();
    }
    rep.attached = backward(tape, l).attached;
  }
  for (auto& [name, t] : leaves) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto v = t.data();
    const std::size_t stride =
        opt.max_probes == 0 || opt.max_probes >= v.size() ? 1 : (v.size() + opt.max_probes - 1) / opt.max_probes;
    double max_diff = 0, max_fd = 0, max_an = 0;
    for (std::size_t i = 0; i < v.size(); i += stride) {
      const double orig = v[i];
      v[i] = orig + opt.step;
      const double lp = loss().item();
      v[i] = orig - opt.step;
      const double lm = loss().item();
      v[i] = orig;
      const double fd = (lp - lm) / (2 * opt.step);
      max_diff = std::max(max_diff, std::abs(fd - analytic[i]));
      max_fd = std::max(max_fd, std::abs(fd));
      max_an = std::max(max_an, std::abs(analytic[i]));
    }
    rep.entries.push_back({name, max_diff / std::max({max_fd, max_an, opt.floor}), max_an, max_diff, max_fd});
    t.drop_grad();
    t.set_requires_grad(false);
  }
  return rep;
}

}  // namespace dmnet
