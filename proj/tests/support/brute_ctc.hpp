#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "simulstream/ctc.hpp"
#include "simulstream/tensor.hpp"

namespace simulstream::testsupport {

// Brute-force CTC reference: enumerates every length-T label path, sums the
// probability of those collapsing to the target, and returns -log of the sum.
// Exponential in T; usable only for the tiny instances the oracle suite runs.
inline double brute_force_ctc_loss(const Tensor& probs, std::span<const int> target) {
  int64_t t_len = probs.dim(0), vocab = probs.dim(1);
  auto pv = probs.values();
  std::vector<int> path(t_len, 0);
  std::vector<int> want(target.begin(), target.end());
  double total = 0.0;
  while (true) {
    double p = 1.0;
    for (int64_t t = 0; t < t_len; ++t) p *= pv[t * vocab + path[t]];
    if (ctc::collapse(path) == want) total += p;
    int64_t pos = t_len - 1;
    while (pos >= 0 && path[pos] == vocab - 1) path[pos--] = 0;
    if (pos < 0) break;
    ++path[pos];
  }
  return total > 0.0 ? -std::log(total) : std::numeric_limits<double>::infinity();
}

}  // namespace simulstream::testsupport
