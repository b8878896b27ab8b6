#pragma once

#include <span>
#include <vector>

#include "simulstream/tensor.hpp"

namespace simulstream::ops {

// Elementwise; shapes must match exactly. There is no implicit broadcasting
// in this kernel beyond add_rowvec below; reshape explicitly instead.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// [T,D] + [D], the bias-add pattern.
Tensor add_rowvec(const Tensor& a, const Tensor& v);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,k] x [n,k]^T -> [m,n]; the attention-score shape.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Row-wise over the last axis of a 1-D or 2-D tensor.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

// Normalizes each row to zero mean / unit variance, then applies gamma, beta.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);

// Lookup rows of table [V,D] at ids; gradient scatters into the table.
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Keeps entries where mask == 1, replaces entries where mask == 0 with fill.
// The mask must be {0,1}-valued, same shape as a, and is never differentiated.
Tensor masked_fill(const Tensor& a, const Tensor& mask, double fill);

// Mean over rows of -log_probs[i][ids[i]]; log_probs is [T,V].
Tensor nll_loss(const Tensor& log_probs, std::span<const int> ids);
// log_softmax + nll in one call.
Tensor cross_entropy(const Tensor& logits, std::span<const int> ids);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Depthwise 1-D convolution over rows of x [T,D] with centered kernel [k,D],
// zero padding. Positions j > chunk_end(i) are excluded from i's window; with
// chunk_frames <= 0 the window is clipped only at the sequence ends.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel, int chunk_frames);

// Column slicing/concatenation (multi-head split/join).
Tensor slice_cols(const Tensor& a, int64_t start, int64_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Row slicing/concatenation.
Tensor slice_rows(const Tensor& a, int64_t start, int64_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);

// Repeats each row r times: [T,D] -> [r*T,D]. Gradient sums over copies.
Tensor upsample_rows(const Tensor& a, int r);

}  // namespace simulstream::ops
