#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "simulstream/tensor.hpp"

namespace simulstream::testsupport {

// Central finite differences of a scalar-valued function of one flat input.
inline std::vector<double> finite_difference(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double saved = x[i];
    x[i] = saved + h;
    double up = f(x);
    x[i] = saved - h;
    double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Max relative error between analytic and numeric gradients, with an absolute
// floor so near-zero entries compare sanely.
inline double max_rel_err(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = 1e-8) {
  double worst = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace simulstream::testsupport
