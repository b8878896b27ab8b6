#include "simulstream/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace simulstream {

double scheduled_lr(const AdamConfig& cfg, int64_t step) {
  if (step <= 0) return 0.0;
  double s = static_cast<double>(step);
  double w = static_cast<double>(cfg.warmup_steps);
  if (step <= cfg.warmup_steps) return cfg.peak_lr * s / w;
  return cfg.peak_lr * std::sqrt(w / s);
}

void AdamOptimizer::step(std::vector<Parameter>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      size_t n = params[i].tensor.values().size();
      m_[i].assign(n, 0.0);
      v_[i].assign(n, 0.0);
    }
  } else if (m_.size() != params.size()) {
    throw std::invalid_argument("adam: optimizer state holds " + std::to_string(m_.size()) +
                                " parameters, model has " + std::to_string(params.size()));
  }
  ++step_;
  double lr = scheduled_lr(cfg_, step_);
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    auto g = p.tensor.grad();
    if (g.empty()) {
      throw std::invalid_argument("adam: parameter '" + p.name + "' has no gradient");
    }
    auto w = p.tensor.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != w.size()) {
      throw std::invalid_argument("adam: moment shape drifted for parameter '" + p.name + "'");
    }
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamOptimizer::restore(int64_t step, std::vector<std::vector<double>> m,
                            std::vector<std::vector<double>> v) {
  if (step < 0) throw std::invalid_argument("adam: negative step counter");
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

void zero_gradients(std::vector<Parameter>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

double clip_grad_norm(std::vector<Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double scale = max_norm / norm;
    for (auto& p : params) {
      for (double& g : p.tensor.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace simulstream
