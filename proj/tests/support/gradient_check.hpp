#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ddvkit/runtime.hpp"
#include "support/reference_net.hpp"

namespace ddv::testing {

struct GradientCheck {
  double relative_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t skipped = 0;  // coordinates whose +/-h probes cross a relu/maxpool kink
};

// Compares input_gradient of output[cls] with central differences of the
// double-precision reference network.
inline GradientCheck check_gradient(const Model& model, const Tensor& x, std::size_t cls,
                                    double h = 1e-3) {
  const OutputObjective objective = [cls](const Tensor& out, Tensor& grad) {
    grad[cls] = 1.0f;
    return static_cast<double>(out[cls]);
  };
  const Tensor analytic = input_gradient(model, x, objective);

  std::vector<double> base(x.data().begin(), x.data().end());
  const auto center = reference_forward(model, base);
  GradientCheck result;
  double max_diff = 0.0;
  double scale = 1e-8;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    const auto rp = reference_forward(model, plus);
    const auto rm = reference_forward(model, minus);
    if (rp.pattern != center.pattern || rm.pattern != center.pattern) {
      ++result.skipped;
      continue;
    }
    const double fd = (rp.output[cls] - rm.output[cls]) / (2.0 * h);
    max_diff = std::max(max_diff, std::abs(fd - analytic[i]));
    scale = std::max({scale, std::abs(fd), std::abs(static_cast<double>(analytic[i]))});
    ++result.coordinates;
  }
  result.relative_error = max_diff / scale;
  return result;
}

}  // namespace ddv::testing
