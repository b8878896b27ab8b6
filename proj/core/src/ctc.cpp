#include "simulstream/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace simulstream::ctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double logsum2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double logsum3(double a, double b, double c) { return logsum2(logsum2(a, b), c); }

}  // namespace

std::vector<int> collapse(std::span<const int> z) {
  std::vector<int> out;
  int last = -1;
  for (int s : z) {
    if (s != last && s != kBlank) out.push_back(s);
    last = s;
  }
  return out;
}

int StreamingCollapser::push(int symbol) {
  int emitted = -1;
  if (symbol != last_raw_ && symbol != kBlank) {
    emitted = symbol;
    ++count_;
  }
  last_raw_ = symbol;
  return emitted;
}

bool ctc_feasible(int64_t t, std::span<const int> target) {
  int64_t need = static_cast<int64_t>(target.size());
  for (size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++need;  // a blank is forced between repeats
  }
  return need <= t;
}

Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target) {
  if (log_probs.shape().size() != 2) {
    throw std::invalid_argument("ctc_loss: log_probs must be [T,V], got " +
                                shape_str(log_probs.shape()));
  }
  const int64_t t_len = log_probs.dim(0);
  const int64_t vocab = log_probs.dim(1);
  for (int y : target) {
    if (y == kBlank || y < 0 || y >= vocab) {
      throw std::invalid_argument("ctc_loss: invalid target id " + std::to_string(y));
    }
  }
  if (!ctc_feasible(t_len, target)) {
    return Tensor::scalar(std::numeric_limits<double>::infinity());
  }

  // Blank-interleaved state sequence: blank, y1, blank, y2, ..., yL, blank.
  const int64_t s_len = 2 * static_cast<int64_t>(target.size()) + 1;
  std::vector<int> label(s_len, kBlank);
  for (size_t i = 0; i < target.size(); ++i) label[2 * i + 1] = target[i];

  auto lp = log_probs.values();
  auto lp_at = [&](int64_t t, int64_t s) { return lp[t * vocab + label[s]]; };

  std::vector<double> alpha(t_len * s_len, kNegInf);
  alpha[0] = lp_at(0, 0);
  if (s_len > 1) alpha[1] = lp_at(0, 1);
  for (int64_t t = 1; t < t_len; ++t) {
    for (int64_t s = 0; s < s_len; ++s) {
      double stay = alpha[(t - 1) * s_len + s];
      double diag = s >= 1 ? alpha[(t - 1) * s_len + s - 1] : kNegInf;
      double skip = kNegInf;
      if (s >= 2 && label[s] != kBlank && label[s] != label[s - 2]) {
        skip = alpha[(t - 1) * s_len + s - 2];
      }
      double acc = logsum3(stay, diag, skip);
      alpha[t * s_len + s] = acc == kNegInf ? kNegInf : acc + lp_at(t, s);
    }
  }
  double log_p = logsum2(alpha[(t_len - 1) * s_len + s_len - 1],
                         s_len > 1 ? alpha[(t_len - 1) * s_len + s_len - 2] : kNegInf);
  if (log_p == kNegInf) {
    return Tensor::scalar(std::numeric_limits<double>::infinity());
  }

  // Backward variables, emissions included, for the gradient.
  std::vector<double> beta(t_len * s_len, kNegInf);
  beta[(t_len - 1) * s_len + s_len - 1] = lp_at(t_len - 1, s_len - 1);
  if (s_len > 1) beta[(t_len - 1) * s_len + s_len - 2] = lp_at(t_len - 1, s_len - 2);
  for (int64_t t = t_len - 2; t >= 0; --t) {
    for (int64_t s = 0; s < s_len; ++s) {
      double stay = beta[(t + 1) * s_len + s];
      double diag = s + 1 < s_len ? beta[(t + 1) * s_len + s + 1] : kNegInf;
      double skip = kNegInf;
      if (s + 2 < s_len && label[s + 2] != kBlank && label[s + 2] != label[s]) {
        skip = beta[(t + 1) * s_len + s + 2];
      }
      double acc = logsum3(stay, diag, skip);
      beta[t * s_len + s] = acc == kNegInf ? kNegInf : acc + lp_at(t, s);
    }
  }

  // d(-log P)/d lp[t,k] = -sum_{s: label(s)=k} exp(alpha + beta - lp[t,k] - log P).
  std::vector<double> grad_table(t_len * vocab, 0.0);
  for (int64_t t = 0; t < t_len; ++t) {
    for (int64_t s = 0; s < s_len; ++s) {
      double a = alpha[t * s_len + s];
      double b = beta[t * s_len + s];
      if (a == kNegInf || b == kNegInf) continue;
      int64_t k = label[s];
      grad_table[t * vocab + k] -= std::exp(a + b - lp[t * vocab + k] - log_p);
    }
  }

  return make_op_result({1}, {-log_p}, {log_probs},
                        [grad_table = std::move(grad_table)](detail::Node& self) {
                          detail::Node& p = *self.parents[0];
                          p.ensure_grad();
                          double g = self.grad[0];
                          for (size_t i = 0; i < grad_table.size(); ++i)
                            p.grad[i] += g * grad_table[i];
                        });
}

std::vector<int> argmax_path(const Tensor& probs) {
  if (probs.shape().size() != 2) {
    throw std::invalid_argument("argmax_path: expected [T,V], got " + shape_str(probs.shape()));
  }
  int64_t t_len = probs.dim(0), vocab = probs.dim(1);
  auto pv = probs.values();
  std::vector<int> path(t_len);
  for (int64_t t = 0; t < t_len; ++t) {
    const double* row = pv.data() + t * vocab;
    int best = 0;
    for (int64_t v = 1; v < vocab; ++v) {
      if (row[v] > row[best]) best = static_cast<int>(v);  // ties keep the lowest id
    }
    path[t] = best;
  }
  return path;
}

std::vector<int> greedy_decode(const Tensor& probs) {
  auto path = argmax_path(probs);
  return collapse(path);
}

std::vector<double> expected_prefix_counts(const Tensor& probs) {
  if (probs.shape().size() != 2) {
    throw std::invalid_argument("expected_prefix_counts: expected [T,V], got " +
                                shape_str(probs.shape()));
  }
  int64_t t_len = probs.dim(0), vocab = probs.dim(1);
  auto pv = probs.values();
  std::vector<double> counts(t_len);
  double acc = 0.0;
  for (int64_t m = 0; m < t_len; ++m) {
    const double* cur = pv.data() + m * vocab;
    const double* prev = m > 0 ? pv.data() + (m - 1) * vocab : nullptr;
    double repeat = 0.0;
    if (prev) {
      for (int64_t v = 0; v < vocab; ++v) {
        if (v == kBlank) continue;
        repeat += cur[v] * prev[v];
      }
    }
    acc += 1.0 - cur[kBlank] - repeat;
    counts[m] = acc;
  }
  return counts;
}

std::vector<int> discrete_prefix_counts(const Tensor& probs) {
  auto path = argmax_path(probs);
  std::vector<int> counts(path.size());
  StreamingCollapser sc;
  for (size_t j = 0; j < path.size(); ++j) {
    sc.push(path[j]);
    counts[j] = sc.count();
  }
  return counts;
}

}  // namespace simulstream::ctc
