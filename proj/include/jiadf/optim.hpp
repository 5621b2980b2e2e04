#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "jiadf/autodiff.hpp"
#include "jiadf/error.hpp"

namespace jiadf {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

// AdamW with decoupled weight decay. Moments are stored in the parameter
// store's order.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamStore& params, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& e : params.entries()) {
      m_.emplace_back(e.value.shape());
      v_.emplace_back(e.value.shape());
    }
  }

  // t += 1; m, v updated; theta <- theta (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
  // The decay factor is applied first so a zero-gradient step is an exact
  // multiplicative shrink.
  void step(ParamStore& params) {
    if (params.size() != m_.size()) throw DimensionError("optimizer state does not match parameter store");
    for (const auto& e : params.entries()) {
      if (!e.grad.all_finite()) throw NumericError("non-finite gradient for parameter '" + e.name + "'");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& e = params.entry(p);
      auto theta = e.value.data();
      auto g = e.grad.data();
      auto m = m_[p].data();
      auto v = v_[p].data();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        theta[i] = theta[i] * decay - cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

struct PlateauConfig {
  double factor = 0.5;
  std::size_t patience = 5;
  double min_lr = 1e-6;
};

// Reduce-on-plateau in maximize mode, no cooldown, strict improvement.
class PlateauScheduler {
 public:
  PlateauScheduler() = default;
  PlateauScheduler(double lr, PlateauConfig cfg = {}) : cfg_(cfg), lr_(lr) {}

  // Feeds one epoch's monitored value and returns the learning rate to use next.
  double update(double metric) {
    if (!std::isfinite(metric)) throw NumericError("plateau scheduler fed a non-finite metric");
    if (metric > best_) {
      best_ = metric;
      bad_epochs_ = 0;
    } else if (++bad_epochs_ > cfg_.patience) {
      lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
      bad_epochs_ = 0;
    }
    return lr_;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }
  std::size_t bad_epochs() const { return bad_epochs_; }
  const PlateauConfig& config() const { return cfg_; }

  void restore(double lr, double best, std::size_t bad_epochs) {
    lr_ = lr;
    best_ = best;
    bad_epochs_ = bad_epochs;
  }

 private:
  PlateauConfig cfg_;
  double lr_ = 1e-4;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
};

}  // namespace jiadf
