#pragma once

#include <string>
#include <vector>

#include "simulstream/tensor.hpp"

namespace simulstream {

// Named trainable tensor. Names must be unique within a model; the checkpoint
// layout is keyed on them.
struct Parameter {
  std::string name;
  Tensor tensor;
};

// Inverse-square-root schedule with linear warmup:
//   lr(s) = peak * s / warmup            for s <= warmup
//   lr(s) = peak * sqrt(warmup / s)      for s >  warmup
struct AdamConfig {
  double peak_lr = 1e-3;
  int warmup_steps = 400;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

double scheduled_lr(const AdamConfig& cfg, int64_t step);

class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update in place. Every parameter must have a populated
  // gradient; a missing one is reported by name. Gradients are left intact.
  void step(std::vector<Parameter>& params);

  int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  // Moment buffers in parameter order, for checkpointing. Sized lazily on the
  // first step; empty when the optimizer is fresh.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void restore(int64_t step, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

void zero_gradients(std::vector<Parameter>& params);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping. No-op when max_norm <= 0.
double clip_grad_norm(std::vector<Parameter>& params, double max_norm);

}  // namespace simulstream
