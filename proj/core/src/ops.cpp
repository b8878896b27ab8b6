#include "simulstream/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace simulstream::ops {

namespace {

using detail::Node;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

// Rows/cols view of a 1-D or 2-D tensor: 1-D counts as a single row.
std::pair<int64_t, int64_t> rows_cols(const Tensor& a, const char* op) {
  const auto& s = a.shape();
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw std::invalid_argument(std::string(op) + ": expected 1-D or 2-D tensor, got " +
                              shape_str(s));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.values[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.values[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return make_op_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  auto [rows, cols] = rows_cols(a, "add_rowvec");
  if (v.shape().size() != 1 || v.dim(0) != cols) {
    throw std::invalid_argument("add_rowvec: vector shape " + shape_str(v.shape()) +
                                " does not match row width " + std::to_string(cols));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto vv = v.values();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out[r * cols + c] += vv[c];
  return make_op_result(a.shape(), std::move(out), {a, v}, [rows, cols](Node& self) {
    Node& pa = *self.parents[0];
    Node& pv = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pv.requires_grad) {
      pv.ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) pv.grad[c] += self.grad[r * cols + c];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      for (int64_t j = 0; j < n; ++j) out[i * n + j] += aik * bv[kk * n + j];
    }
  add_flops(static_cast<uint64_t>(m * n * k));
  return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      // dA = dC x B^T
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          double s = 0.0;
          for (int64_t j = 0; j < n; ++j) s += self.grad[i * n + j] * pb.values[kk * n + j];
          pa.grad[i * k + kk] += s;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      // dB = A^T x dC, accumulated row-sequentially
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          double aik = pa.values[i * k + kk];
          if (aik == 0.0) continue;
          const double* g = self.grad.data() + i * n;
          double* dst = pb.grad.data() + kk * n;
          for (int64_t j = 0; j < n; ++j) dst[j] += aik * g[j];
        }
    }
    add_flops(static_cast<uint64_t>(2 * m * n * k));
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()) + "^T");
  }
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t kk = 0; kk < k; ++kk) s += av[i * k + kk] * bv[j * k + kk];
      out[i * n + j] = s;
    }
  add_flops(static_cast<uint64_t>(m * n * k));
  return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      // dA = dC x B, accumulated row-sequentially
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          double g = self.grad[i * n + j];
          if (g == 0.0) continue;
          const double* brow = pb.values.data() + j * k;
          double* dst = pa.grad.data() + i * k;
          for (int64_t kk = 0; kk < k; ++kk) dst[kk] += g * brow[kk];
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      // dB = dC^T x A, accumulated row-sequentially
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          double g = self.grad[i * n + j];
          if (g == 0.0) continue;
          const double* arow = pa.values.data() + i * k;
          double* dst = pb.grad.data() + j * k;
          for (int64_t kk = 0; kk < k; ++kk) dst[kk] += g * arow[kk];
        }
    }
    add_flops(static_cast<uint64_t>(2 * m * n * k));
  });
}

namespace {

// Shared softmax forward; returns probabilities per row. Masked entries
// arrive as -inf and come out as exact zeros.
std::vector<double> softmax_rows(std::span<const double> in, int64_t rows, int64_t cols) {
  std::vector<double> out(in.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    for (int64_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& a) {
  auto [rows, cols] = rows_cols(a, "softmax");
  std::vector<double> out = softmax_rows(a.values(), rows, cols);
  return make_op_result(a.shape(), std::move(out), {a}, [rows, cols](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = self.values.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (int64_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
      double* gx = p.grad.data() + r * cols;
      for (int64_t c = 0; c < cols; ++c) gx[c] += y[c] * (gy[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  auto [rows, cols] = rows_cols(a, "log_softmax");
  std::vector<double> out(a.size());
  auto in = a.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (int64_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    double lz = mx + std::log(z);
    for (int64_t c = 0; c < cols; ++c) y[c] = x[c] - lz;
  }
  return make_op_result(a.shape(), std::move(out), {a}, [rows, cols](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = self.values.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double gsum = 0.0;
      for (int64_t c = 0; c < cols; ++c) gsum += gy[c];
      double* gx = p.grad.data() + r * cols;
      for (int64_t c = 0; c < cols; ++c) gx[c] += gy[c] - std::exp(y[c]) * gsum;
    }
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  auto [rows, cols] = rows_cols(a, "layer_norm");
  if (gamma.size() != cols || beta.size() != cols) {
    throw std::invalid_argument("layer_norm: affine shapes " + shape_str(gamma.shape()) + "/" +
                                shape_str(beta.shape()) + " do not match width " +
                                std::to_string(cols));
  }
  std::vector<double> out(a.size());
  std::vector<double> inv_std(rows), mean_row(rows);
  auto in = a.values();
  auto g = gamma.values();
  auto b = beta.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * cols;
    double m = 0.0;
    for (int64_t c = 0; c < cols; ++c) m += x[c];
    m /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t c = 0; c < cols; ++c) var += (x[c] - m) * (x[c] - m);
    var /= static_cast<double>(cols);
    double is = 1.0 / std::sqrt(var + eps);
    mean_row[r] = m;
    inv_std[r] = is;
    double* y = out.data() + r * cols;
    for (int64_t c = 0; c < cols; ++c) y[c] = (x[c] - m) * is * g[c] + b[c];
  }
  return make_op_result(
      a.shape(), std::move(out), {a, gamma, beta},
      [rows, cols, mean_row = std::move(mean_row), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const double* x = px.values.data() + r * cols;
          const double* gy = self.grad.data() + r * cols;
          double m = mean_row[r], is = inv_std[r];
          if (pg.requires_grad || pb.requires_grad) {
            for (int64_t c = 0; c < cols; ++c) {
              double xhat = (x[c] - m) * is;
              if (pg.requires_grad) pg.grad[c] += gy[c] * xhat;
              if (pb.requires_grad) pb.grad[c] += gy[c];
            }
          }
          if (px.requires_grad) {
            // d xhat = g * gy; dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            double sum_d = 0.0, sum_dx = 0.0;
            for (int64_t c = 0; c < cols; ++c) {
              double dxhat = pg.values[c] * gy[c];
              double xhat = (x[c] - m) * is;
              sum_d += dxhat;
              sum_dx += dxhat * xhat;
            }
            double inv_n = 1.0 / static_cast<double>(cols);
            double* gx = px.grad.data() + r * cols;
            for (int64_t c = 0; c < cols; ++c) {
              double dxhat = pg.values[c] * gy[c];
              double xhat = (x[c] - m) * is;
              gx[c] += is * (dxhat - inv_n * sum_d - xhat * inv_n * sum_dx);
            }
          }
        }
      });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_op_result(a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (p.values[i] > 0.0) p.grad[i] += self.grad[i];
  });
}

Tensor silu(const Tensor& a) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) {
    double s = 1.0 / (1.0 + std::exp(-av[i]));
    out[i] = av[i] * s;
  }
  return make_op_result(a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double x = p.values[i];
      double s = 1.0 / (1.0 + std::exp(-x));
      p.grad[i] += self.grad[i] * (s + x * s * (1.0 - s));
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.shape().size() != 2) {
    throw std::invalid_argument("embedding: table must be 2-D, got " + shape_str(table.shape()));
  }
  int64_t v = table.dim(0), d = table.dim(1);
  int64_t t = static_cast<int64_t>(ids.size());
  std::vector<double> out(t * d);
  auto tv = table.values();
  for (int64_t i = 0; i < t; ++i) {
    int id = ids[i];
    if (id < 0 || id >= v) {
      throw std::invalid_argument("embedding: id " + std::to_string(id) + " outside table rows " +
                                  std::to_string(v));
    }
    std::copy(tv.begin() + id * d, tv.begin() + (id + 1) * d, out.begin() + i * d);
  }
  std::vector<int> ids_copy(ids.begin(), ids.end());
  return make_op_result({t, d}, std::move(out), {table},
                        [d, ids_copy = std::move(ids_copy)](Node& self) {
                          Node& p = *self.parents[0];
                          p.ensure_grad();
                          for (size_t i = 0; i < ids_copy.size(); ++i) {
                            double* dst = p.grad.data() + static_cast<int64_t>(ids_copy[i]) * d;
                            const double* src = self.grad.data() + static_cast<int64_t>(i) * d;
                            for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
                          }
                        });
}

Tensor masked_fill(const Tensor& a, const Tensor& mask, double fill) {
  check_same_shape(a, mask, "masked_fill");
  if (mask.requires_grad()) throw std::invalid_argument("masked_fill: mask must not require grad");
  auto mv = mask.values();
  std::vector<double> out(a.size());
  auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) {
    double m = mv[i];
    if (m != 0.0 && m != 1.0) {
      throw std::invalid_argument("masked_fill: mask must be {0,1}-valued, found " +
                                  std::to_string(m));
    }
    out[i] = m == 1.0 ? av[i] : fill;
  }
  std::vector<double> mask_copy(mv.begin(), mv.end());
  return make_op_result(a.shape(), std::move(out), {a},
                        [mask_copy = std::move(mask_copy)](Node& self) {
                          Node& p = *self.parents[0];
                          p.ensure_grad();
                          for (size_t i = 0; i < self.grad.size(); ++i)
                            if (mask_copy[i] == 1.0) p.grad[i] += self.grad[i];
                        });
}

Tensor nll_loss(const Tensor& log_probs, std::span<const int> ids) {
  auto [rows, cols] = rows_cols(log_probs, "nll_loss");
  if (static_cast<int64_t>(ids.size()) != rows) {
    throw std::invalid_argument("nll_loss: " + std::to_string(ids.size()) + " targets for " +
                                std::to_string(rows) + " rows");
  }
  double total = 0.0;
  auto lp = log_probs.values();
  for (int64_t r = 0; r < rows; ++r) {
    int id = ids[r];
    if (id < 0 || id >= cols) {
      throw std::invalid_argument("nll_loss: target id " + std::to_string(id) +
                                  " outside vocab " + std::to_string(cols));
    }
    total -= lp[r * cols + id];
  }
  total /= static_cast<double>(rows);
  std::vector<int> ids_copy(ids.begin(), ids.end());
  return make_op_result({1}, {total}, {log_probs},
                        [rows, cols, ids_copy = std::move(ids_copy)](Node& self) {
                          Node& p = *self.parents[0];
                          p.ensure_grad();
                          double g = self.grad[0] / static_cast<double>(rows);
                          for (int64_t r = 0; r < rows; ++r)
                            p.grad[r * cols + ids_copy[r]] -= g;
                        });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> ids) {
  return nll_loss(log_softmax(logits), ids);
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_op_result({1}, {s}, {a}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  int64_t n = a.size();
  s /= static_cast<double>(n);
  return make_op_result({1}, {s}, {a}, [n](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    double g = self.grad[0] / static_cast<double>(n);
    for (double& pg : p.grad) pg += g;
  });
}

namespace {
inline int64_t chunk_end(int64_t i, int64_t t, int chunk_frames) {
  if (chunk_frames <= 0) return t - 1;  // no chunking: clip at sequence end
  int64_t c = chunk_frames;
  int64_t end = ((i / c) + 1) * c - 1;  // 0-based upper bound of i's chunk
  return std::min(end, t - 1);
}
}  // namespace

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel, int chunk_frames) {
  if (x.shape().size() != 2 || kernel.shape().size() != 2 || kernel.dim(1) != x.dim(1)) {
    throw std::invalid_argument("depthwise_conv1d: shapes " + shape_str(x.shape()) + " with kernel " +
                                shape_str(kernel.shape()));
  }
  int64_t t = x.dim(0), d = x.dim(1), k = kernel.dim(0);
  if (k % 2 == 0) throw std::invalid_argument("depthwise_conv1d: kernel size must be odd");
  int64_t half = k / 2;
  std::vector<double> out(t * d, 0.0);
  auto xv = x.values();
  auto kv = kernel.values();
  for (int64_t i = 0; i < t; ++i) {
    int64_t hi = std::min(i + half, chunk_end(i, t, chunk_frames));
    for (int64_t j = std::max<int64_t>(0, i - half); j <= hi; ++j) {
      int64_t tap = j - i + half;
      const double* xr = xv.data() + j * d;
      const double* kr = kv.data() + tap * d;
      double* yr = out.data() + i * d;
      for (int64_t c = 0; c < d; ++c) yr[c] += xr[c] * kr[c];
    }
  }
  add_flops(static_cast<uint64_t>(t * d * k));
  return make_op_result({t, d}, std::move(out), {x, kernel},
                        [t, d, k, half, chunk_frames](Node& self) {
                          Node& px = *self.parents[0];
                          Node& pk = *self.parents[1];
                          if (px.requires_grad) px.ensure_grad();
                          if (pk.requires_grad) pk.ensure_grad();
                          for (int64_t i = 0; i < t; ++i) {
                            int64_t hi = std::min(i + half, chunk_end(i, t, chunk_frames));
                            const double* gy = self.grad.data() + i * d;
                            for (int64_t j = std::max<int64_t>(0, i - half); j <= hi; ++j) {
                              int64_t tap = j - i + half;
                              if (px.requires_grad) {
                                double* gx = px.grad.data() + j * d;
                                const double* kr = pk.values.data() + tap * d;
                                for (int64_t c = 0; c < d; ++c) gx[c] += gy[c] * kr[c];
                              }
                              if (pk.requires_grad) {
                                double* gk = pk.grad.data() + tap * d;
                                const double* xr = px.values.data() + j * d;
                                for (int64_t c = 0; c < d; ++c) gk[c] += gy[c] * xr[c];
                              }
                            }
                          }
                        });
}

Tensor slice_cols(const Tensor& a, int64_t start, int64_t count) {
  auto [rows, cols] = rows_cols(a, "slice_cols");
  if (start < 0 || count <= 0 || start + count > cols) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + "," +
                                std::to_string(start + count) + ") outside width " +
                                std::to_string(cols));
  }
  std::vector<double> out(rows * count);
  auto av = a.values();
  for (int64_t r = 0; r < rows; ++r)
    std::copy(av.begin() + r * cols + start, av.begin() + r * cols + start + count,
              out.begin() + r * count);
  return make_op_result({rows, count}, std::move(out), {a}, [rows, cols, start, count](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < count; ++c)
        p.grad[r * cols + start + c] += self.grad[r * count + c];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  int64_t rows = parts[0].dim(0);
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.dim(0) != rows) {
      throw std::invalid_argument("concat_cols: row mismatch, " + shape_str(p.shape()) +
                                  " vs rows " + std::to_string(rows));
    }
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  std::vector<int64_t> widths;
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t w = p.dim(1);
    widths.push_back(w);
    auto pv = p.values();
    for (int64_t r = 0; r < rows; ++r)
      std::copy(pv.begin() + r * w, pv.begin() + (r + 1) * w, out.begin() + r * total + off);
    off += w;
  }
  return make_op_result({rows, total}, std::move(out), parts,
                        [rows, total, widths = std::move(widths)](Node& self) {
                          int64_t off = 0;
                          for (size_t k = 0; k < widths.size(); ++k) {
                            Node& p = *self.parents[k];
                            int64_t w = widths[k];
                            if (p.requires_grad) {
                              p.ensure_grad();
                              for (int64_t r = 0; r < rows; ++r)
                                for (int64_t c = 0; c < w; ++c)
                                  p.grad[r * w + c] += self.grad[r * total + off + c];
                            }
                            off += w;
                          }
                        });
}

Tensor slice_rows(const Tensor& a, int64_t start, int64_t count) {
  auto [rows, cols] = rows_cols(a, "slice_rows");
  if (start < 0 || count <= 0 || start + count > rows) {
    throw std::invalid_argument("slice_rows: [" + std::to_string(start) + "," +
                                std::to_string(start + count) + ") outside rows " +
                                std::to_string(rows));
  }
  std::vector<double> out(a.values().begin() + start * cols,
                          a.values().begin() + (start + count) * cols);
  return make_op_result({count, cols}, std::move(out), {a}, [cols, start](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[start * cols + i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  int64_t cols = parts[0].dim(-1);
  int64_t rows = 0;
  for (const auto& p : parts) {
    if (p.dim(-1) != cols) {
      throw std::invalid_argument("concat_rows: width mismatch, " + shape_str(p.shape()) +
                                  " vs width " + std::to_string(cols));
    }
    rows += p.shape().size() == 1 ? 1 : p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  std::vector<int64_t> counts;
  for (const auto& p : parts) {
    auto pv = p.values();
    out.insert(out.end(), pv.begin(), pv.end());
    counts.push_back(static_cast<int64_t>(pv.size()));
  }
  return make_op_result({rows, cols}, std::move(out), parts, [counts = std::move(counts)](Node& self) {
    int64_t off = 0;
    for (size_t k = 0; k < counts.size(); ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) {
        p.ensure_grad();
        for (int64_t i = 0; i < counts[k]; ++i) p.grad[i] += self.grad[off + i];
      }
      off += counts[k];
    }
  });
}

Tensor upsample_rows(const Tensor& a, int r) {
  auto [rows, cols] = rows_cols(a, "upsample_rows");
  if (r < 1) throw std::invalid_argument("upsample_rows: rate must be >= 1");
  std::vector<double> out(rows * r * cols);
  auto av = a.values();
  for (int64_t i = 0; i < rows; ++i)
    for (int e = 0; e < r; ++e)
      std::copy(av.begin() + i * cols, av.begin() + (i + 1) * cols,
                out.begin() + (i * r + e) * cols);
  return make_op_result({rows * r, cols}, std::move(out), {a}, [rows, cols, r](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (int64_t i = 0; i < rows; ++i)
      for (int e = 0; e < r; ++e) {
        const double* g = self.grad.data() + (i * r + e) * cols;
        double* pg = p.grad.data() + i * cols;
        for (int64_t c = 0; c < cols; ++c) pg[c] += g[c];
      }
  });
}

}  // namespace simulstream::ops
