#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

// Second, deliberately naive latency evaluator used to cross-check the
// production one. Everything is written straight from the formulas with no
// shared code: delays d[i] in ms for output frames i = 1..F, source length
// x ms, declared target length s ms, q ms of output per frame.

namespace naive_latency {

struct Inputs {
  std::vector<double> d;  // per-frame delays
  double x = 0;
  double s = 0;
  double q = 0;
  int tau = 0;  // 1-based AL cutoff, supplied by the caller
};

inline double average_lagging(const Inputs& in) {
  double gamma = in.s / in.x;  // ms of target per ms of source
  double acc = 0;
  for (int i = 1; i <= in.tau; ++i) {
    acc += in.d[i - 1] - ((i - 1) * in.q) / gamma;
  }
  return acc / in.tau;
}

inline double average_proportion(const Inputs& in) {
  double acc = 0;
  for (double v : in.d) acc += v * in.q;
  return acc / (in.x * in.s);
}

inline double differentiable_average_lagging(const Inputs& in) {
  double gamma = in.s / in.x;
  std::vector<double> dp(in.d.size());
  for (size_t i = 0; i < in.d.size(); ++i) {
    dp[i] = i == 0 ? in.d[0] : std::max(in.d[i], dp[i - 1] + in.q / gamma);
  }
  double acc = 0;
  for (size_t i = 0; i < dp.size(); ++i) acc += dp[i] - (double(i) * in.q) / gamma;
  return acc / double(dp.size());
}

inline double length_adaptive_average_lagging(const Inputs& in) {
  double generated = double(in.d.size()) * in.q;
  double gamma = std::max(in.s, generated) / in.x;
  double acc = 0;
  for (int i = 1; i <= in.tau; ++i) {
    acc += in.d[i - 1] - ((i - 1) * in.q) / gamma;
  }
  return acc / in.tau;
}

}  // namespace naive_latency
