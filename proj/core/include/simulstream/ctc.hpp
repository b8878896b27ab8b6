#pragma once

#include <span>
#include <vector>

#include "simulstream/tensor.hpp"

namespace simulstream::ctc {

// Reserved ids shared by every decoder in the project: 0 pad, 1 <eos>,
// 2 blank, real tokens from 3 up.
inline constexpr int kPad = 0;
inline constexpr int kEos = 1;
inline constexpr int kBlank = 2;
inline constexpr int kFirstToken = 3;

// Merges consecutive repeats, then removes blanks.
std::vector<int> collapse(std::span<const int> z);

// Incremental collapse over a raw label stream. Feeding symbols one at a time
// and concatenating the emissions reproduces collapse() of the whole stream.
class StreamingCollapser {
 public:
  // Returns the token emitted by this symbol, or -1 for none.
  int push(int symbol);
  int count() const { return count_; }

 private:
  int last_raw_ = -1;
  int count_ = 0;
};

// True when the blank-extended target fits into t frames.
bool ctc_feasible(int64_t t, std::span<const int> target);

// Negative log probability of all label paths collapsing to `target`, by the
// forward algorithm in log space over the blank-interleaved target.
// `log_probs` is [T, V] and graph-attached gradients flow back into it.
// An infeasible target yields +infinity (no graph), not an exception.
Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target);

// Per-position argmax (ties to the lowest id), then collapse.
std::vector<int> greedy_decode(const Tensor& probs);
std::vector<int> argmax_path(const Tensor& probs);

// Expected number of collapsed tokens aligned to each prefix, computed from
// probability rows [T, V]:
//   N_j = sum_{m<=j} ( 1 - p(blank|m) - sum_v p(v|m) * p(v|m-1) )
// with p(.|0) = 0. The sum over v runs over non-blank symbols.
std::vector<double> expected_prefix_counts(const Tensor& probs);

// Discrete counterpart used at inference: N_j = |collapse(argmax(rows 1..j))|.
std::vector<int> discrete_prefix_counts(const Tensor& probs);

}  // namespace simulstream::ctc
